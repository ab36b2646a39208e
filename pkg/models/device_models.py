import math
from functools import lru_cache
from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.interpolate import PchipInterpolator

from utils.constants import H_OVER_KB, X_ZPF_DEFAULT


class DeviceParams(BaseModel):
    """Optical and mechanical constants of the optomechanical cavity (all rates in Hz, i.e. /2π values)"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    g0: float = Field(..., gt=0, description="Vacuum optomechanical coupling (Hz)")
    kappa: float = Field(..., gt=0, description="Total optical energy decay rate (Hz)")
    kappa_e: float = Field(..., gt=0, description="External (waveguide) coupling rate (Hz)")
    kappa_i: float = Field(..., gt=0, description="Intrinsic optical loss rate (Hz)")
    omega_m: float = Field(..., gt=0, description="Mechanical frequency (Hz)")
    lambda_c: float = Field(..., gt=0, description="Optical resonance wavelength (m)")
    x_zpf: float = Field(X_ZPF_DEFAULT, gt=0, description="Zero-point amplitude (m)")

    @model_validator(mode='after')
    def validate_decay_budget(self):
        """kappa must equal kappa_e + kappa_i to 1 ppm"""
        if abs(self.kappa - (self.kappa_e + self.kappa_i)) > 1e-6 * self.kappa:
            raise ValueError(
                f"kappa ({self.kappa}) must equal kappa_e + kappa_i ({self.kappa_e + self.kappa_i})"
            )
        return self

    @property
    def sideband_resolved(self) -> bool:
        return self.omega_m > self.kappa

    @classmethod
    def reference_device(cls, **overrides) -> 'DeviceParams':
        """The 3.6 GHz silicon nanobeam measured at mK temperatures"""
        values = dict(
            g0=735e3, kappa=529e6, kappa_e=153e6, kappa_i=376e6,
            omega_m=3.6e9, lambda_c=1545e-9,
        )
        values.update(overrides)
        return cls(**values)


class ProbeState(BaseModel):
    """Laser probe: detuning Δ = ω_c − ω_s (Hz) and intracavity photon number"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    detuning: float = Field(..., description="Signed laser-cavity detuning (Hz)")
    n_c: float = Field(..., ge=0, description="Intracavity photon number")

    @classmethod
    def red(cls, dev: DeviceParams, n_c: float) -> 'ProbeState':
        return cls(detuning=dev.omega_m, n_c=n_c)

    @classmethod
    def blue(cls, dev: DeviceParams, n_c: float) -> 'ProbeState':
        return cls(detuning=-dev.omega_m, n_c=n_c)

    @classmethod
    def resonant(cls, n_c: float) -> 'ProbeState':
        return cls(detuning=0.0, n_c=n_c)


class ActivatedGammaP(BaseModel):
    """γ_p(T_p) = amplitude·T_p·exp(−T_c/T_p), the low-temperature three-phonon form"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["activated"] = "activated"
    amplitude: float = Field(..., ge=0, description="Rate per kelvin (Hz/K)")
    T_c: float = Field(..., ge=0, description="Cutoff temperature ħω_c/k_B (K)")

    def __call__(self, T_p: float) -> float:
        if T_p <= 0:
            return 0.0
        return self.amplitude * T_p * math.exp(-self.T_c / T_p)

    @classmethod
    def from_continuum(cls, bath: 'ContinuumBath', omega_m: float) -> 'ActivatedGammaP':
        """Leading-order low-T limit of the continuum integral for the same bath"""
        T_c = bath.T_c
        return cls(amplitude=bath.prefactor * omega_m * T_c ** bath.a, T_c=T_c)


@lru_cache(maxsize=64)
def _log_log_pchip(T_p: Tuple[float, ...], gamma: Tuple[float, ...]) -> PchipInterpolator:
    return PchipInterpolator(np.log(T_p), np.log(gamma), extrapolate=False)


class TabulatedGammaP(BaseModel):
    """Monotone piecewise-cubic γ_p(T_p) through tabulated knots, interpolated in log-log space"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["tabulated"] = "tabulated"
    T_p: List[float] = Field(..., min_length=2, description="Knot temperatures (K), increasing")
    gamma: List[float] = Field(..., min_length=2, description="γ_p at the knots (Hz)")

    @model_validator(mode='after')
    def validate_knots(self):
        if len(self.T_p) != len(self.gamma):
            raise ValueError("T_p and gamma knots must have the same length")
        if any(t <= 0 for t in self.T_p) or any(np.diff(self.T_p) <= 0):
            raise ValueError("T_p knots must be positive and strictly increasing")
        if any(g <= 0 for g in self.gamma):
            raise ValueError("gamma knots must be positive")
        return self

    def __call__(self, T_p: float) -> float:
        if T_p <= 0:
            return 0.0
        spline = _log_log_pchip(tuple(self.T_p), tuple(self.gamma))
        # clamp outside the tabulated range
        log_t = min(max(math.log(T_p), math.log(self.T_p[0])), math.log(self.T_p[-1]))
        return float(np.exp(spline(log_t)))


GammaPLaw = Annotated[Union[ActivatedGammaP, TabulatedGammaP], Field(discriminator="kind")]


class JitterLaw(BaseModel):
    """Gaussian frequency-jitter FWHM γ_G = amplitude·x^exponent with x = T_p (K) or n_c"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    amplitude: float = Field(..., ge=0, description="γ_G at x = 1 (Hz)")
    exponent: float = Field(..., description="Power-law exponent (−0.9 vs T_p, −0.23 vs n_c)")
    variable: Literal["T_p", "n_c"] = Field("T_p", description="Quantity the law is referenced to")

    def __call__(self, x: float) -> float:
        if x <= 0:
            return 0.0
        return self.amplitude * x ** self.exponent


class BathModel(BaseModel):
    """Fridge bath plus the optical-absorption bath coupled to the mechanical mode"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    gamma_0: float = Field(..., ge=0, description="Coupling to the fridge bath (Hz)")
    T_f: float = Field(..., ge=0, description="Fridge temperature (K)")
    np_amplitude: float = Field(..., gt=0, description="Absorption-bath occupancy at n_c = 1")
    np_exponent: float = Field(0.25, ge=0, description="Power-law exponent of n_p(n_c)")
    gamma_p_law: GammaPLaw = Field(..., description="γ_p as a function of T_p")
    jitter_law: Optional[JitterLaw] = Field(None, description="Optional frequency-jitter law")

    def n_p(self, n_c: float) -> float:
        """Absorption-bath occupancy extrapolated from the resonant power law"""
        return self.np_amplitude * n_c ** self.np_exponent

    def with_fridge(self, T_f: float) -> 'BathModel':
        return self.model_copy(update={"T_f": T_f})

    @classmethod
    def thermal(cls, gamma_0: float, T_f: float) -> 'BathModel':
        """Single fridge bath with the absorption bath switched off"""
        return cls(
            gamma_0=gamma_0, T_f=T_f, np_amplitude=1.0, np_exponent=0.0,
            gamma_p_law=ActivatedGammaP(amplitude=0.0, T_c=0.0),
        )


class ToyThreePhonon(BaseModel):
    """Two high-frequency modes scattering into the mechanical mode (ω₁ − ω₂ = ω_m)"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    omega_1: float = Field(..., gt=0, description="Upper mode frequency (Hz)")
    omega_2: float = Field(..., gt=0, description="Lower mode frequency (Hz)")
    omega_m: float = Field(..., gt=0, description="Mechanical frequency (Hz)")
    A: float = Field(..., gt=0, description="Anharmonic matrix-element rate (Hz)")
    T_p: float = Field(..., ge=0, description="Temperature of both high-frequency modes (K)")

    @model_validator(mode='after')
    def validate_energy_conservation(self):
        if self.omega_1 <= self.omega_2:
            raise ValueError("omega_1 must exceed omega_2")
        if abs((self.omega_1 - self.omega_2) - self.omega_m) > 1e-6 * self.omega_m:
            raise ValueError("omega_1 - omega_2 must equal omega_m to 1 ppm")
        return self

    @classmethod
    def from_upper(cls, omega_1: float, omega_m: float, A: float, T_p: float) -> 'ToyThreePhonon':
        return cls(omega_1=omega_1, omega_2=omega_1 - omega_m, omega_m=omega_m, A=A, T_p=T_p)


class ContinuumBath(BaseModel):
    """High-frequency phonon continuum above a cutoff, with ρ(ω)·A(ω, ω_m) ∝ ω^a"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    a: float = Field(..., gt=1, description="Power-law exponent of ρ·A")
    omega_c: float = Field(..., gt=0, description="Cutoff frequency (Hz)")
    prefactor: float = Field(1.0, gt=0, description="Rate normalisation, Hz·Hz⁻¹·K^-(a+1)")
    integrand: Literal["power_law", "continuum_elastic"] = Field(
        "power_law", description="ω^a, or the elastic-continuum ω_m(ω_m + ω)ω³ product"
    )

    @property
    def T_c(self) -> float:
        return self.omega_c * H_OVER_KB

    @classmethod
    def from_cutoff_temperature(cls, a: float, T_c: float, **kwargs) -> 'ContinuumBath':
        return cls(a=a, omega_c=T_c / H_OVER_KB, **kwargs)
