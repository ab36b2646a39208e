import logging
import math
from datetime import datetime
from typing import Optional, Union

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import voigt_profile

from models.device_models import BathModel, DeviceParams, ProbeState
from models.spectrum_models import CalibrationChain, LineshapeParams, Spectrum, SpectrumMetadata
from services.optomechanics_service import (
    energy_damping, jitter_width, mode_occupancy, optical_frequency, transduction_rate,
)
from utils.constants import H
from utils.enums import SpectrumUnit
from utils.rng import point_generator

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# FWHM → standard deviation of a Gaussian
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))

# Negative calibrated occupancies closer to zero than this are clamped
NEGATIVE_OCCUPANCY_TOLERANCE = 1e-3


class SpectraError(Exception):
    """Custom exception for spectrum synthesis and calibration"""
    pass


class CalibrationError(SpectraError, ValueError):
    """Calibration input implies an efficiency outside [0, 1] or a degenerate floor"""
    pass


class NegativeOccupancyError(SpectraError):
    """Blue-detuned area is below the vacuum contribution"""
    pass


def _scalar_or_array(values: np.ndarray) -> ArrayLike:
    return float(values) if values.ndim == 0 else values


# Lineshapes

def lorentzian_psd(n: float, gamma: float, center: float, f: ArrayLike) -> ArrayLike:
    """Unit-area Lorentzian of FWHM gamma (Hz) scaled by the occupancy n"""
    if gamma <= 0:
        raise SpectraError(f"Lorentzian width must be positive, got {gamma}")
    f = np.asarray(f, dtype=float)
    half = gamma / 2.0
    return _scalar_or_array(n * (half / math.pi) / ((f - center) ** 2 + half ** 2))


def gaussian_psd(area: float, gamma_G: float, center: float, f: ArrayLike) -> ArrayLike:
    if gamma_G <= 0:
        raise SpectraError(f"Gaussian width must be positive, got {gamma_G}")
    sigma = gamma_G * FWHM_TO_SIGMA
    f = np.asarray(f, dtype=float)
    return _scalar_or_array(
        area * np.exp(-0.5 * ((f - center) / sigma) ** 2) / (sigma * math.sqrt(2.0 * math.pi))
    )


def voigt_psd(params: LineshapeParams, f: ArrayLike) -> ArrayLike:
    """Floor plus area × (Lorentzian FWHM gamma_L ⊗ unit-area Gaussian FWHM gamma_G).

    Uses the Faddeeva function through scipy.special.voigt_profile.
    """
    if params.gamma_L + params.gamma_G <= 0:
        raise SpectraError("Voigt profile needs gamma_L + gamma_G > 0")
    f = np.asarray(f, dtype=float)
    profile = voigt_profile(f - params.center, params.gamma_G * FWHM_TO_SIGMA, params.gamma_L / 2.0)
    return _scalar_or_array(params.floor + params.area * profile)


def voigt_fwhm(gamma_L: ArrayLike, gamma_G: ArrayLike) -> ArrayLike:
    """Olivero-Longbothum approximation to the Voigt FWHM (0.02% accurate)"""
    gamma_L = np.asarray(gamma_L, dtype=float)
    gamma_G = np.asarray(gamma_G, dtype=float)
    return _scalar_or_array(0.5346 * gamma_L + np.sqrt(0.2166 * gamma_L ** 2 + gamma_G ** 2))


# Heterodyne detection

def shot_noise_level(calib: CalibrationChain, f_o: float) -> float:
    """Shot-noise PSD at the analyser, (G_e²/R_L)·2hf_o·P_LO (W/Hz)"""
    return calib.G_e ** 2 / calib.R_L * 2.0 * H * f_o * calib.P_LO


def total_efficiency(calib: CalibrationChain) -> float:
    return calib.eta_cpl * calib.eta_23 * calib.eta_VC * calib.eta_det


def detected_quanta(dev: DeviceParams, probe: ProbeState, bath: BathModel) -> float:
    """Phonon quanta carried by the detected sideband: ⟨n⟩ red or resonant, ⟨n⟩+1 blue"""
    occupancy = mode_occupancy(dev, probe, bath)
    return occupancy + 1.0 if probe.detuning < 0 else occupancy


def signal_gain(dev: DeviceParams, probe: ProbeState, calib: CalibrationChain) -> float:
    """Detected peak area (W) per phonon quantum"""
    f_o = optical_frequency(dev)
    return (shot_noise_level(calib, f_o) * total_efficiency(calib) * calib.beta
            * 2.0 * math.pi * transduction_rate(dev, probe))


def sideband_area(dev: DeviceParams, probe: ProbeState, bath: BathModel, calib: CalibrationChain) -> float:
    """Integrated signal area (W) of the mechanical sideband above the floor"""
    return signal_gain(dev, probe, calib) * detected_quanta(dev, probe, bath)


def heterodyne_lineshape(dev: DeviceParams, probe: ProbeState, bath: BathModel,
                         calib: CalibrationChain) -> LineshapeParams:
    """Noiseless detector-unit lineshape of the beat note"""
    floor = calib.S_dark + shot_noise_level(calib, optical_frequency(dev))
    return LineshapeParams(
        center=calib.beat_frequency,
        gamma_L=energy_damping(dev, probe, bath),
        gamma_G=jitter_width(probe, bath, dev.omega_m),
        area=sideband_area(dev, probe, bath, calib),
        floor=floor,
    )


def heterodyne_psd(dev: DeviceParams, probe: ProbeState, bath: BathModel,
                   calib: CalibrationChain, f_grid: np.ndarray,
                   timestamp: Optional[datetime] = None) -> Spectrum:
    """Photocurrent PSD S_II (W/Hz): dark floor, shot noise and the Voigt sideband"""
    shape = heterodyne_lineshape(dev, probe, bath, calib)
    metadata = SpectrumMetadata(
        detuning=probe.detuning,
        n_c=probe.n_c,
        T_f=bath.T_f,
        timestamp=timestamp,
        calibration_id=calib.calibration_id,
    )
    return Spectrum.from_grid(f_grid, voigt_psd(shape, f_grid), metadata, unit=SpectrumUnit.DETECTOR)


def add_measurement_noise(spec: Spectrum, seed: int, n_avg: float, index: int = 0) -> Spectrum:
    """Multiplicative Gaussian noise with relative σ = 1/√n_avg on every bin.

    Approximates averaged periodogram statistics; adequate for n_avg ≥ 10.
    """
    if n_avg < 1:
        raise SpectraError(f"n_avg must be at least 1, got {n_avg}")
    if math.isinf(n_avg):
        return spec
    rng = point_generator(seed, index)
    noise = rng.standard_normal(len(spec.values)) / math.sqrt(n_avg)
    metadata = spec.metadata.model_copy(update={"n_avg": float(n_avg)})
    return spec.with_values(spec.psd * (1.0 + noise), metadata=metadata.model_dump())


# Calibration chain

def fiber_coupling_efficiency(P_PM: float, P_in: float, eta_12: float, eta_23: float) -> float:
    """Device coupling efficiency from the power returned to the power meter"""
    if P_in <= 0:
        raise CalibrationError(f"input power must be positive, got {P_in}")
    if P_PM < 0:
        raise CalibrationError(f"measured power must be non-negative, got {P_PM}")
    if not (0 < eta_12 <= 1 and 0 < eta_23 <= 1):
        raise CalibrationError("circulator efficiencies must lie in (0, 1]")
    radicand = P_PM / (eta_23 * eta_12 * P_in)
    if radicand > 1.0 + 1e-12:
        raise CalibrationError(f"implied coupling efficiency {math.sqrt(radicand):.4f} exceeds 1")
    return math.sqrt(min(radicand, 1.0))


def receiver_efficiency(S_II: Spectrum, S_noise: float, S_dark: float, P_cal: float, f_o: float) -> float:
    """η_VC·η_det from a calibration tone of known power P_cal (W) at optical frequency f_o"""
    if P_cal <= 0:
        raise CalibrationError(f"calibration power must be positive, got {P_cal}")
    excess_floor = S_noise - S_dark
    if excess_floor <= 1e-12 * max(abs(S_noise), abs(S_dark), 1e-300):
        raise CalibrationError("shot-noise floor is indistinguishable from the dark floor")
    tone = (S_II.psd - S_noise) / excess_floor
    return H * f_o / P_cal * trapezoid(tone, S_II.frequencies)


def calibration_tone_psd(calib: CalibrationChain, P_cal: float, f_o: float, f_grid: np.ndarray,
                         center: Optional[float] = None, width: float = 1e3) -> Spectrum:
    """Synthetic receiver-calibration measurement: Gaussian tone of P_cal on the noise floor"""
    f_grid = np.asarray(f_grid, dtype=float)
    center = calib.beat_frequency if center is None else center
    S_noise = calib.S_dark + shot_noise_level(calib, f_o)
    excess_floor = S_noise - calib.S_dark
    tone_area = calib.receiver_efficiency * P_cal / (H * f_o)
    values = S_noise + excess_floor * gaussian_psd(tone_area, width, center, f_grid)
    metadata = SpectrumMetadata(detuning=0.0, n_c=0.0, T_f=0.0, calibration_id=calib.calibration_id)
    return Spectrum.from_grid(f_grid, values, metadata)


def calibrate_occupancy(area_detected: float, calib: CalibrationChain, dev: DeviceParams,
                        probe: ProbeState) -> float:
    """Occupancy ⟨n⟩ from a detector-unit peak area (W), with the β correction divided out"""
    if area_detected < 0:
        raise SpectraError(f"detected area must be non-negative, got {area_detected}")
    gain = signal_gain(dev, probe, calib)
    if gain <= 0:
        raise CalibrationError("transduction gain is zero; is n_c > 0?")
    quanta = area_detected / gain
    if probe.detuning >= 0:
        return quanta
    occupancy = quanta - 1.0
    if occupancy < -NEGATIVE_OCCUPANCY_TOLERANCE:
        raise NegativeOccupancyError(
            f"blue-detuned area corresponds to {quanta:.4g} quanta, below the vacuum contribution"
        )
    return max(occupancy, 0.0)


def convert_spectrum(spec: Spectrum, calib: CalibrationChain, dev: DeviceParams,
                     probe: ProbeState, unit: SpectrumUnit) -> Spectrum:
    """Re-express a spectrum in detector, shot-noise-relative or displacement units.

    Synthesized, stored and fitted spectra stay in detector units (W/Hz); the
    shot-noise-relative and displacement forms exist only as outputs of this function.
    """
    if spec.unit == unit:
        return spec
    f_o = optical_frequency(dev)
    noise = shot_noise_level(calib, f_o)
    per_quantum = total_efficiency(calib) * calib.beta * 2.0 * math.pi * transduction_rate(dev, probe)
    if per_quantum <= 0 and SpectrumUnit.DISPLACEMENT in (unit, spec.unit):
        raise CalibrationError("displacement units need a non-zero transduction rate")

    if spec.unit == SpectrumUnit.DETECTOR:
        relative = (spec.psd - calib.S_dark) / noise
    elif spec.unit == SpectrumUnit.SHOT_NOISE:
        relative = spec.psd
    else:
        relative = 1.0 + spec.psd * per_quantum / dev.x_zpf ** 2

    if unit == SpectrumUnit.DETECTOR:
        values = calib.S_dark + noise * relative
    elif unit == SpectrumUnit.SHOT_NOISE:
        values = relative
    else:
        # S_xx = x_zpf² S_bb with the shot-noise floor removed
        values = dev.x_zpf ** 2 * (relative - 1.0) / per_quantum
    return spec.with_values(values, unit=unit)
