import math
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from models.device_models import BathModel, GammaPLaw, JitterLaw, TabulatedGammaP
from models.spectrum_models import LineshapeParams
from utils.constants import H_OVER_KB
from utils.enums import DetuningSign


class FitResult(BaseModel):
    """Outcome of a least-squares fit; serialises with stable field names"""

    model_config = ConfigDict(frozen=True)

    parameters: Dict[str, float] = Field(..., description="Best-fit values by name")
    uncertainties: Dict[str, float] = Field(..., description="1σ from the local quadratic model")
    residual_norm: float = Field(..., ge=0, description="Euclidean norm of weighted residuals")
    converged: bool
    iterations: int = Field(..., ge=0)
    warnings: List[str] = Field(default_factory=list)
    cost_history: List[float] = Field(default_factory=list, description="Objective at accepted iterates")

    @model_validator(mode='after')
    def validate_finite(self):
        """Converged fits must have finite parameters and non-negative uncertainties"""
        if self.converged and not all(math.isfinite(v) for v in self.parameters.values()):
            raise ValueError("converged fit has non-finite parameters")
        if any(u < 0 for u in self.uncertainties.values() if not math.isnan(u)):
            raise ValueError("uncertainties must be non-negative")
        return self

    def value(self, name: str) -> float:
        return self.parameters[name]

    def error(self, name: str) -> float:
        return self.uncertainties[name]

    def to_report(self) -> dict:
        """JSON-ready dict with the stable field names"""
        return self.model_dump(mode="json")


class LineshapeFit(BaseModel):
    """Lineshape parameters together with the fit that produced them"""

    model_config = ConfigDict(frozen=True)

    params: LineshapeParams
    result: FitResult


class CoolingCurvePoint(BaseModel):
    """One calibrated measurement of occupancy and linewidth at a photon number"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_c: float = Field(..., gt=0, description="Intracavity photon number")
    occupancy: float = Field(..., description="Calibrated mode occupancy ⟨n⟩")
    occupancy_err: float = Field(0.0, ge=0, description="1σ on the occupancy")
    linewidth: float = Field(..., ge=0, description="Measured mechanical linewidth (Hz)")
    linewidth_err: float = Field(0.0, ge=0, description="1σ on the linewidth (Hz)")
    detuning_sign: DetuningSign = Field(DetuningSign.RED, description="+1 red, −1 blue, 0 resonant")
    T_f: float = Field(..., ge=0, description="Fridge temperature (K)")


class PowerLawFit(BaseModel):
    """y = amplitude·x^exponent from log-log regression"""

    model_config = ConfigDict(frozen=True)

    amplitude: float
    exponent: float
    amplitude_err: float = Field(..., ge=0)
    exponent_err: float = Field(..., ge=0)

    def __call__(self, x):
        return self.amplitude * np.asarray(x, dtype=float) ** self.exponent


class DetuningAreaFit(BaseModel):
    """Area-vs-detuning fit with back-action, alongside the C → 0 null model"""

    model_config = ConfigDict(frozen=True)

    full: FitResult
    null: FitResult

    @property
    def cooperativity(self) -> float:
        return self.full.value("cooperativity")

    @property
    def prefers_backaction(self) -> bool:
        return self.full.residual_norm < self.null.residual_norm


class BathModelFit(BaseModel):
    """Joint two-temperature fit of a common γ_0 and a γ_p(n_c) knot table"""

    model_config = ConfigDict(frozen=True)

    gamma_0: float = Field(..., ge=0, description="Fridge-bath coupling (Hz)")
    gamma_0_err: float = Field(..., ge=0, description="1σ from the profile likelihood (Hz)")
    gamma_0_interval: List[float] = Field(..., description="Profile-likelihood 1σ interval (Hz)")
    knots_n_c: List[float] = Field(..., description="Photon numbers of the γ_p knots")
    gamma_p: List[float] = Field(..., description="γ_p at each knot (Hz)")
    gamma_p_err: List[float] = Field(..., description="1σ on γ_p at each knot (Hz)")
    np_amplitude: float
    np_exponent: float
    omega_m: float = Field(..., gt=0, description="Mechanical frequency the knots refer to (Hz)")
    result: FitResult

    @field_validator('gamma_p')
    def validate_gamma_p(cls, v):
        if any(g < 0 for g in v):
            raise ValueError("gamma_p knots must be non-negative")
        return v

    def knot_temperatures(self) -> List[float]:
        """Absorption-bath temperature at each knot, from n_p(n_c)"""
        return [
            H_OVER_KB * self.omega_m / math.log1p(1.0 / (self.np_amplitude * n ** self.np_exponent))
            for n in self.knots_n_c
        ]

    def gamma_p_law(self) -> GammaPLaw:
        """γ_p(T_p) table obtained by mapping each n_c knot to its absorption-bath temperature"""
        floor = 1e-12
        return TabulatedGammaP(T_p=self.knot_temperatures(), gamma=[max(g, floor) for g in self.gamma_p])

    def to_bath_model(self, T_f: float, jitter_law: Optional[JitterLaw] = None) -> BathModel:
        return BathModel(
            gamma_0=self.gamma_0,
            T_f=T_f,
            np_amplitude=self.np_amplitude,
            np_exponent=self.np_exponent,
            gamma_p_law=self.gamma_p_law(),
            jitter_law=jitter_law,
        )
