import hashlib
import json
from datetime import datetime
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from models.device_models import ActivatedGammaP, BathModel, ContinuumBath, DeviceParams
from models.fit_models import FitResult
from models.spectrum_models import CalibrationChain
from utils.enums import DetuningSign, FitMode, SweepScale, SweepVariable


def canonical_json(payload: Any) -> str:
    """Key-sorted, whitespace-free JSON used for hashing"""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def config_hash(payload: Any) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def default_bath() -> BathModel:
    """Two-bath model matching the low-temperature measurements of the nanobeam"""
    return BathModel(
        gamma_0=306.0, T_f=0.010, np_amplitude=13.3, np_exponent=0.25,
        gamma_p_law=ActivatedGammaP(amplitude=785.0, T_c=2.0),
    )


class SweepSpec(BaseModel):
    """One swept axis: n_c, detuning (Hz), fridge temperature T_f (K) or absorption-bath T_p (K)"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    variable: SweepVariable = Field(SweepVariable.N_C, description="Quantity varied across the sweep")
    scale: SweepScale = Field(SweepScale.LOG, description="Point spacing")
    start: float = Field(0.01, description="First sweep value")
    stop: float = Field(100.0, description="Last sweep value")
    points: int = Field(25, ge=2, description="Number of sweep values")

    @model_validator(mode='after')
    def validate_range(self):
        if not self.start < self.stop:
            raise ValueError(f"sweep start ({self.start}) must be below stop ({self.stop})")
        if self.scale == SweepScale.LOG and self.start <= 0:
            raise ValueError("log-scaled sweeps need a positive start")
        if self.variable != SweepVariable.DETUNING and self.start < 0:
            raise ValueError(f"{self.variable.value} sweeps must be non-negative")
        return self

    def values(self) -> np.ndarray:
        if self.scale == SweepScale.LOG:
            return np.geomspace(self.start, self.stop, self.points)
        return np.linspace(self.start, self.stop, self.points)


class NoiseSpec(BaseModel):
    """Seed for all randomness and the number of averaged traces (None: noiseless spectra)"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = Field(0, ge=0, lt=2 ** 64, description="Root seed of the run")
    n_avg: Optional[float] = Field(None, ge=1, description="Averaged traces per spectrum")


class OutputSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    directory: str = Field("omckit-out", description="Directory the report is written to")
    formats: List[Literal["csv", "svg"]] = Field(default_factory=lambda: ["csv"], min_length=1)
    write_spectra: bool = Field(True, description="Write every synthesized spectrum with its sidecar")


class SpectrumGrid(BaseModel):
    """Frequency grid of each synthesized spectrum, centred on the beat note"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    points: int = Field(1024, ge=16, description="Samples per spectrum")
    linewidths: float = Field(12.0, gt=0, description="Half-span in units of the peak FWHM")
    min_span: float = Field(40e3, gt=0, description="Smallest full span (Hz)")


class PhononSpec(BaseModel):
    """Continuum bath and the T_p grid tabulated by the phonon command"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    bath: ContinuumBath = Field(
        default_factory=lambda: ContinuumBath.from_cutoff_temperature(a=3.0, T_c=2.0)
    )
    omega_m: Optional[float] = Field(None, gt=0, description="Mechanical frequency; device value when unset")
    T_p: List[float] = Field(
        default_factory=lambda: [float(t) for t in np.geomspace(0.1, 10.0, 41)],
        min_length=1, description="Absorption-bath temperatures to tabulate (K)",
    )


class RunConfig(BaseModel):
    """Single JSON document describing a simulate, phonon or fit run"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    device: DeviceParams = Field(default_factory=DeviceParams.reference_device)
    bath: BathModel = Field(default_factory=default_bath)
    calibration: CalibrationChain = Field(default_factory=CalibrationChain)
    sweep: SweepSpec = Field(default_factory=SweepSpec)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    outputs: OutputSpec = Field(default_factory=OutputSpec)
    spectrum: SpectrumGrid = Field(default_factory=SpectrumGrid)
    phonon: PhononSpec = Field(default_factory=PhononSpec)
    fridge_temperatures: Optional[List[float]] = Field(
        None, min_length=1, description="Fridge temperatures simulated; bath.T_f when unset"
    )
    detunings: List[DetuningSign] = Field(
        default_factory=lambda: [DetuningSign.RED, DetuningSign.BLUE], min_length=1,
        description="Sidebands probed at each sweep value (ignored by detuning sweeps)",
    )
    n_c: float = Field(1.0, gt=0, description="Photon number held fixed by detuning, T_f and T_p sweeps")
    workers: int = Field(1, ge=1, le=64, description="Concurrent sweep points")

    @field_validator('fridge_temperatures')
    def validate_fridge_temperatures(cls, v):
        if v is not None and any(t < 0 for t in v):
            raise ValueError("fridge temperatures must be non-negative")
        return v

    @model_validator(mode='after')
    def validate_t_p_sweep(self):
        if self.sweep.variable == SweepVariable.T_P and self.bath.np_exponent == 0:
            raise ValueError("T_p sweeps need a bath with np_exponent > 0 to map T_p onto n_c")
        return self

    def temperatures(self) -> List[float]:
        return list(self.fridge_temperatures) if self.fridge_temperatures else [self.bath.T_f]

    def with_overrides(self, **updates) -> 'RunConfig':
        """Re-validated copy; nested keys are given as dicts, e.g. noise={"seed": 3}"""
        data = self.model_dump(mode="json")
        for key, value in updates.items():
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key].update(value)
            else:
                data[key] = value
        return RunConfig.model_validate(data)

    def digest(self) -> str:
        return config_hash(self.model_dump(mode="json"))


class Provenance(BaseModel):
    model_config = ConfigDict(frozen=True)

    command: str
    config_hash: str = Field(..., min_length=64, max_length=64)
    version: str
    timestamp: datetime


class ReportBundle(BaseModel):
    """Tables, fits and provenance produced by one command"""

    model_config = ConfigDict(frozen=True)

    tables: Dict[str, str] = Field(default_factory=dict, description="Table name -> CSV text")
    fits: Dict[str, FitResult] = Field(default_factory=dict)
    provenance: Provenance
    config: Dict[str, Any] = Field(default_factory=dict, description="Canonical config that was hashed")
    files: List[str] = Field(default_factory=list, description="Extra files written, relative to the report")
    warnings: List[str] = Field(default_factory=list)
    failures: List[Dict[str, Any]] = Field(default_factory=list, description="Items that raised, with reasons")

    @model_validator(mode='after')
    def validate_provenance(self):
        if config_hash(self.config) != self.provenance.config_hash:
            raise ValueError("provenance hash does not match the stored config")
        return self

    def has_table(self, name: str) -> bool:
        return name in self.tables


class FitOptions(BaseModel):
    """Inputs and settings of one fit command; hashed into the report provenance"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: FitMode
    inputs: List[str] = Field(default_factory=list, description="Spectrum files, directories or series CSVs")
    device: DeviceParams = Field(default_factory=DeviceParams.reference_device)
    calibration: CalibrationChain = Field(default_factory=CalibrationChain)
    np_amplitude: float = Field(13.3, gt=0, description="n_p at n_c = 1 for bath-model fits")
    np_exponent: float = Field(0.25, ge=0)
    cooperativity: Optional[float] = Field(None, description="Fixed C for detuning fits; area fit value when unset")
    include_jitter: bool = Field(True, description="Fit a Gaussian jitter width in detuning fits")
    g0_method: Literal["linewidth", "cooperativity", "both"] = "linewidth"
    bath_mode: Literal["spline", "per_point"] = "spline"
    n_starts: int = Field(1, ge=1, le=32)
    x_column: str = Field("x", description="Abscissa column for power-law fits")
    y_column: str = Field("y", description="Ordinate column for power-law fits")
    error_column: Optional[str] = Field(None, description="1σ column for power-law fits")
    workers: int = Field(1, ge=1, le=64)

    @classmethod
    def from_run_config(cls, config: RunConfig, mode: FitMode, inputs: List[str], **options) -> 'FitOptions':
        return cls(
            mode=mode,
            inputs=inputs,
            device=config.device,
            calibration=config.calibration,
            np_amplitude=config.bath.np_amplitude,
            np_exponent=config.bath.np_exponent,
            workers=config.workers,
            **options,
        )

    def digest(self) -> str:
        return config_hash(self.model_dump(mode="json"))
