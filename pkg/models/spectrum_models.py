import math
from datetime import datetime
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from utils.constants import BEAT_FREQUENCY_DEFAULT
from utils.enums import SpectrumUnit


class SpectrumMetadata(BaseModel):
    """Probe record stored in the JSON sidecar of a spectrum file"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    detuning: float = Field(..., description="Laser-cavity detuning Δ (Hz)")
    n_c: float = Field(..., ge=0, description="Intracavity photon number")
    T_f: float = Field(..., ge=0, description="Fridge temperature (K)")
    timestamp: Optional[datetime] = Field(None, description="When the spectrum was produced")
    calibration_id: Optional[str] = Field(None, description="Calibration chain used for synthesis")
    n_avg: Optional[float] = Field(None, ge=1, description="Number of averaged traces, if noisy")


class Spectrum(BaseModel):
    """Uniformly sampled noise power spectral density around the mechanical beat note"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    f_start: float = Field(..., description="Frequency of the first bin (Hz)")
    f_step: float = Field(..., gt=0, description="Bin spacing (Hz)")
    values: Tuple[float, ...] = Field(..., min_length=16, description="PSD samples")
    unit: SpectrumUnit = Field(SpectrumUnit.DETECTOR, description="Unit of the PSD samples")
    rbw: float = Field(..., gt=0, description="Resolution bandwidth (Hz)")
    metadata: SpectrumMetadata

    @field_validator('values')
    def validate_values(cls, v):
        """Reject NaN and infinite samples"""
        if not all(math.isfinite(x) for x in v):
            raise ValueError("spectrum values must all be finite")
        return v

    @property
    def frequencies(self) -> np.ndarray:
        return self.f_start + self.f_step * np.arange(len(self.values))

    @property
    def psd(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def with_values(self, values: np.ndarray, **updates) -> 'Spectrum':
        """Copy with new samples (and optionally other fields), re-validated"""
        data = self.model_dump()
        data.update(updates)
        data["values"] = tuple(float(x) for x in values)
        return Spectrum.model_validate(data)

    @classmethod
    def from_grid(cls, f_grid: np.ndarray, values: np.ndarray, metadata: SpectrumMetadata,
                  unit: SpectrumUnit = SpectrumUnit.DETECTOR, rbw: Optional[float] = None) -> 'Spectrum':
        """Build from a uniform frequency grid; rbw defaults to the bin spacing"""
        f_grid = np.asarray(f_grid, dtype=float)
        f_step = float((f_grid[-1] - f_grid[0]) / (len(f_grid) - 1))
        return cls(
            f_start=float(f_grid[0]),
            f_step=f_step,
            values=tuple(float(x) for x in values),
            unit=unit,
            rbw=rbw if rbw is not None else f_step,
            metadata=metadata,
        )


class LineshapeParams(BaseModel):
    """Voigt peak on a flat floor: center, Lorentzian/Gaussian FWHMs, area and floor"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    center: float = Field(..., description="Beat-note frequency Ω/2π (Hz)")
    gamma_L: float = Field(..., ge=0, description="Lorentzian FWHM, energy damping (Hz)")
    gamma_G: float = Field(0.0, ge=0, description="Gaussian FWHM, frequency jitter (Hz)")
    area: float = Field(..., ge=0, description="Integrated peak area (PSD units × Hz)")
    floor: float = Field(0.0, description="Flat background (PSD units)")


class CalibrationChain(BaseModel):
    """Efficiencies and gains mapping detected PSD area to phonon occupancy"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    eta_12: float = Field(0.88, ge=0, le=1, description="Circulator port 1→2 transmission")
    eta_23: float = Field(0.84, ge=0, le=1, description="Circulator port 2→3 transmission")
    eta_cpl: float = Field(0.34, ge=0, le=1, description="Device reflection/collection efficiency")
    eta_VC: float = Field(0.8, ge=0, le=1, description="Variable-coupler efficiency")
    eta_det: float = Field(0.7, ge=0, le=1, description="Balanced-detector efficiency")
    G_e: float = Field(1.0e4, gt=0, description="Detector conversion gain (V/W)")
    R_L: float = Field(50.0, gt=0, description="Spectrum-analyser input impedance (Ω)")
    P_LO: float = Field(0.7e-3, gt=0, description="Local-oscillator power (W)")
    P_in: float = Field(20e-6, gt=0, description="Signal input power (W)")
    S_dark: float = Field(3.6e-17, ge=0, description="Electronic dark-noise PSD (W/Hz)")
    beta: float = Field(1.0, gt=0, description="Systematic correction on calibrated occupancy")
    beat_frequency: float = Field(BEAT_FREQUENCY_DEFAULT, gt=0, description="Heterodyne beat note Ω/2π (Hz)")
    calibration_id: str = Field("default", description="Identifier written to spectrum sidecars")

    @model_validator(mode='after')
    def validate_total_efficiency(self):
        total = self.eta_cpl * self.eta_23 * self.eta_VC * self.eta_det
        if not 0.0 <= total <= 1.0:
            raise ValueError(f"total efficiency {total} outside [0, 1]")
        return self

    @property
    def receiver_efficiency(self) -> float:
        return self.eta_VC * self.eta_det
