from scipy import constants

# CODATA exact values; every module reads them from here
H = constants.h
K_B = constants.k
C_LIGHT = constants.c

# h / k_B in K per Hz
H_OVER_KB = H / K_B

# Zero-point amplitude of the breathing mode (m)
X_ZPF_DEFAULT = 4.1e-15

# Heterodyne beat note of the detected sideband (Hz)
BEAT_FREQUENCY_DEFAULT = 50e6

# Written into every report's provenance block
TOOLKIT_VERSION = "1.0.0"
