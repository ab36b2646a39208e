import logging
import math
from typing import NamedTuple, Sequence

import numpy as np
from scipy import integrate, special

from models.device_models import ContinuumBath, ToyThreePhonon
from services.optomechanics_service import bose_einstein
from utils.constants import H_OVER_KB

logger = logging.getLogger(__name__)

# Quadrature is split here; beyond it the integrand is e^-x x^a to double precision
TAIL_START = 50.0
QUAD_EPSREL = 1e-10


class PhononError(Exception):
    """Custom exception for three-phonon bath calculations"""
    pass


class PhononDomainError(PhononError, ValueError):
    """Argument outside the domain of a phonon-bath formula"""
    pass


class ToyRates(NamedTuple):
    gamma_plus: float
    gamma_minus: float


class EffectiveBath(NamedTuple):
    n_p: float
    gamma_p: float


class Relaxation(NamedTuple):
    times: np.ndarray
    n_m: np.ndarray


# Special functions

def upper_incomplete_gamma(alpha: float, z: float) -> float:
    """Γ(α, z) = ∫_z^∞ t^(α−1) e^(−t) dt (not regularised)"""
    if alpha <= 0:
        raise PhononDomainError(f"alpha must be positive, got {alpha}")
    if z < 0:
        raise PhononDomainError(f"z must be non-negative, got {z}")
    return float(special.gammaincc(alpha, z) * special.gamma(alpha))


def riemann_zeta(a: float) -> float:
    if a <= 1:
        raise PhononDomainError(f"zeta diverges for a <= 1, got {a}")
    return float(special.zeta(a))


# Toy model of two discrete high-frequency modes

def _toy_occupancies(model: ToyThreePhonon):
    """(n₁, n₂) for the upper and lower modes at T_p"""
    return bose_einstein(model.omega_1, model.T_p), bose_einstein(model.omega_2, model.T_p)


def three_phonon_rates(A: float, n_1: float, n_2: float, n_m: float) -> ToyRates:
    """Γ₊ = A(n_m+1)(n₂+1)n₁ and Γ₋ = A(n₁+1)n_m n₂ for given occupancies"""
    if min(n_1, n_2, n_m) < 0:
        raise PhononDomainError("occupancies must be non-negative")
    return ToyRates(
        gamma_plus=A * (n_m + 1.0) * (n_2 + 1.0) * n_1,
        gamma_minus=A * (n_1 + 1.0) * n_m * n_2,
    )


def toy_rates(model: ToyThreePhonon, n_m: float) -> ToyRates:
    """Scattering rates into (Γ₊) and out of (Γ₋) the mechanical mode"""
    n_1, n_2 = _toy_occupancies(model)
    return three_phonon_rates(model.A, n_1, n_2, n_m)


def toy_effective_bath(model: ToyThreePhonon) -> EffectiveBath:
    """Occupancy and coupling of the bath the two modes present to the mechanics.

    The fixed point of Γ₊ = Γ₋ with the lower mode more occupied than the upper
    one (n₂ > n₁ because ω₂ < ω₁) is n_p = n₁(n₂ + 1)/(n₂ − n₁), which equals
    the Bose-Einstein occupancy at ω_m when both modes sit at T_p.
    """
    n_1, n_2 = _toy_occupancies(model)
    difference = n_2 - n_1
    if difference == 0:
        raise PhononError(f"mode occupancies are degenerate at T_p={model.T_p}")
    return EffectiveBath(n_p=n_1 * (n_2 + 1.0) / difference, gamma_p=model.A * difference)


def toy_relaxation(model: ToyThreePhonon, n_m0: float, times: Sequence[float]) -> Relaxation:
    """Integrate dn_m/dt = 2π(Γ₊ − Γ₋) from n_m(0) = n_m0; rates in Hz, times in s"""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) < 2 or np.any(np.diff(times) <= 0):
        raise PhononDomainError("times must be an increasing sequence of at least two values")
    n_1, n_2 = _toy_occupancies(model)

    def rate(_t, y):
        n_m = y[0]
        return [2.0 * math.pi * model.A * ((n_m + 1.0) * (n_2 + 1.0) * n_1 - (n_1 + 1.0) * n_m * n_2)]

    solution = integrate.solve_ivp(
        rate, (times[0], times[-1]), [n_m0], t_eval=times, method="LSODA", rtol=1e-10, atol=1e-12,
    )
    if not solution.success:
        raise PhononError(f"rate-equation integration failed: {solution.message}")
    return Relaxation(times=solution.t, n_m=solution.y[0])


# Continuum of high-frequency phonons

def _integrand(a: float, x_m: float, variant: str):
    if variant == "power_law":
        return lambda x: x ** a * math.exp(-x) / math.expm1(-x) ** 2
    if variant == "continuum_elastic":
        return lambda x: x ** 3 * (x + x_m) * math.exp(-x) / math.expm1(-x) ** 2
    raise PhononDomainError(f"unknown integrand variant {variant!r}")


def thermal_integral(a: float, x_c: float, variant: str = "power_law", x_m: float = 0.0) -> float:
    """I(a, x_c) = ∫_{x_c}^∞ x^a eˣ/(eˣ − 1)² dx by adaptive quadrature.

    The interval is split at max(x_c, 1) and at 50; beyond 50 the Bose factor is
    1 to double precision, so the tail is Γ(a + 1, x) exactly. The elastic
    variant replaces x^a by x³(x + x_m).
    """
    if x_c < 0:
        raise PhononDomainError(f"x_c must be non-negative, got {x_c}")
    if variant == "power_law" and a <= 1:
        raise PhononDomainError(f"a must exceed 1, got {a}")
    f = _integrand(a, x_m, variant)

    lower = x_c
    total = 0.0
    for upper in (max(x_c, 1.0), max(x_c, TAIL_START)):
        if upper > lower:
            value, _ = integrate.quad(f, lower, upper, epsabs=0.0, epsrel=QUAD_EPSREL, limit=200)
            total += value
            lower = upper
    start = max(x_c, TAIL_START)
    if variant == "power_law":
        total += upper_incomplete_gamma(a + 1.0, start)
    else:
        total += upper_incomplete_gamma(5.0, start) + x_m * upper_incomplete_gamma(4.0, start)
    return total


def cutoff_temperature(omega_c: float) -> float:
    return omega_c * H_OVER_KB


def cutoff_frequency(T_c: float) -> float:
    return T_c / H_OVER_KB


def cutoff_ratio(bath: ContinuumBath, T_p: float) -> float:
    """x_c = hω_c/(k_B T_p)"""
    if T_p <= 0:
        raise PhononDomainError(f"T_p must be positive, got {T_p}")
    return bath.T_c / T_p


def rate_scale(bath: ContinuumBath, omega_m: float, T_p: float) -> float:
    """prefactor·ω_m·T_p^(a+1), the factor multiplying the dimensionless integral"""
    # the elastic integrand x³(x + x_m) carries its own exponent, a is unused
    power = 5.0 if bath.integrand == "continuum_elastic" else bath.a + 1.0
    return bath.prefactor * omega_m * T_p ** power


def gamma_p_integral(bath: ContinuumBath, omega_m: float, T_p: float) -> float:
    """γ_p from the full continuum integral"""
    x_c = cutoff_ratio(bath, T_p)
    if bath.integrand == "continuum_elastic":
        integral = thermal_integral(bath.a, x_c, variant="continuum_elastic", x_m=omega_m * H_OVER_KB / T_p)
    else:
        integral = thermal_integral(bath.a, x_c)
    return rate_scale(bath, omega_m, T_p) * integral


def gamma_p_low_T(bath: ContinuumBath, omega_m: float, T_p: float, leading_order: bool = False) -> float:
    """Low-temperature form: Γ(a + 1, x_c), or its activated leading term T_p·exp(−T_c/T_p)"""
    if T_p <= 0:
        return 0.0
    x_c = cutoff_ratio(bath, T_p)
    if leading_order:
        return rate_scale(bath, omega_m, T_p) * x_c ** bath.a * math.exp(-x_c)
    return rate_scale(bath, omega_m, T_p) * upper_incomplete_gamma(bath.a + 1.0, x_c)


def gamma_p_high_T(bath: ContinuumBath, omega_m: float, T_p: float) -> float:
    """High-temperature power law prefactor·ω_m·T_p^(a+1)·aΓ(a)ζ(a)"""
    if bath.a <= 1:
        raise PhononDomainError(f"a must exceed 1, got {bath.a}")
    if T_p < 0:
        raise PhononDomainError(f"T_p must be non-negative, got {T_p}")
    return rate_scale(bath, omega_m, T_p) * high_t_coefficient(bath.a)


def high_t_coefficient(a: float) -> float:
    """I(a, 0) = aΓ(a)ζ(a)"""
    return a * float(special.gamma(a)) * riemann_zeta(a)


def activated_gamma_p(amplitude: float, T_c: float, T_p: float) -> float:
    """amplitude·T_p·exp(−T_c/T_p), the form fitted to low-temperature γ_p data"""
    if T_p <= 0:
        return 0.0
    return amplitude * T_p * math.exp(-T_c / T_p)
