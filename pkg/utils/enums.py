from enum import Enum


class SpectrumUnit(str, Enum):
    DETECTOR = "W/Hz"
    SHOT_NOISE = "quanta/Hz"
    DISPLACEMENT = "m2/Hz"


class DetuningSign(int, Enum):
    RED = 1
    RESONANT = 0
    BLUE = -1


class SweepVariable(str, Enum):
    N_C = "n_c"
    DETUNING = "detuning"
    T_F = "T_f"
    T_P = "T_p"


class SweepScale(str, Enum):
    LOG = "log"
    LINEAR = "linear"


class FitMode(str, Enum):
    LORENTZIAN = "lorentzian"
    VOIGT = "voigt"
    DETUNING = "detuning"
    POWER_LAW = "power-law"
    BATH_MODEL = "bath-model"
    G0 = "g0"


class Figure(str, Enum):
    FIG2A = "fig2a"
    FIG2B = "fig2b"
    FIG3B = "fig3b"
    FIG3C = "fig3c"
    FIG4A = "fig4a"
    FIG4B = "fig4b"
    FIG4E = "fig4e"
    FIGS5B = "figS5b"
