import logging
import math
from typing import NamedTuple, Union

import numpy as np

from models.device_models import BathModel, DeviceParams, ProbeState
from utils.constants import C_LIGHT, H, H_OVER_KB

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


class PhysicsError(Exception):
    """Custom exception for closed-form optomechanics"""
    pass


class DomainError(PhysicsError, ValueError):
    """Argument outside the domain of a physical formula"""
    pass


class InstabilityError(PhysicsError):
    """Total mechanical damping is not positive (self-oscillation)"""
    pass


class AbsorptionBath(NamedTuple):
    n_p: float
    T_p: float
    gamma_p: float


# Occupancies and temperatures

def bose_einstein(f: float, T: float) -> float:
    """Mean thermal occupancy 1/(exp(hf/k_BT) − 1) of a mode at f (Hz) and T (K)"""
    if f <= 0:
        raise DomainError(f"frequency must be positive, got {f}")
    if T < 0:
        raise DomainError(f"temperature must be non-negative, got {T}")
    if T == 0:
        return 0.0
    x = H_OVER_KB * f / T
    if x > 700:
        return 0.0
    return 1.0 / math.expm1(x)


def inverse_bose_einstein(f: float, n: float) -> float:
    """Temperature (K) at which a mode at f (Hz) holds n quanta"""
    if f <= 0:
        raise DomainError(f"frequency must be positive, got {f}")
    if n <= 0:
        raise DomainError(f"occupancy must be positive, got {n}")
    return H_OVER_KB * f / math.log1p(1.0 / n)


# Optomechanical rates

def backaction_rate(dev: DeviceParams, detuning: ArrayLike, n_c: float) -> ArrayLike:
    """γ_OM for scalar or array detunings; positive on the red side"""
    delta = np.asarray(detuning, dtype=float)
    half_kappa_sq = (dev.kappa / 2.0) ** 2
    anti_stokes = 1.0 / ((delta - dev.omega_m) ** 2 + half_kappa_sq)
    stokes = 1.0 / ((delta + dev.omega_m) ** 2 + half_kappa_sq)
    rate = dev.g0 ** 2 * n_c * dev.kappa * (anti_stokes - stokes)
    return float(rate) if rate.ndim == 0 else rate


def gamma_om(dev: DeviceParams, probe: ProbeState) -> float:
    """Optomechanical damping rate (Hz) with both sideband Lorentzians"""
    return backaction_rate(dev, probe.detuning, probe.n_c)


def backaction_shape(dev: DeviceParams, detuning: ArrayLike) -> ArrayLike:
    """γ_OM(Δ)/γ_OM(ω_m), independent of n_c and g₀"""
    return backaction_rate(dev, detuning, 1.0) / backaction_rate(dev, dev.omega_m, 1.0)


def transduction_rate(dev: DeviceParams, probe: ProbeState) -> float:
    """Sideband photons per phonon leaving through the waveguide (Hz).

    Anti-Stokes scattering is detected for Δ ≥ 0, Stokes for Δ < 0.
    """
    sign = 1.0 if probe.detuning >= 0 else -1.0
    lorentzian = 1.0 / ((probe.detuning - sign * dev.omega_m) ** 2 + (dev.kappa / 2.0) ** 2)
    return dev.kappa_e / dev.kappa * dev.g0 ** 2 * probe.n_c * dev.kappa * lorentzian


def transduction_envelope(dev: DeviceParams, detuning: ArrayLike) -> ArrayLike:
    """Anti-Stokes transduction relative to its value at Δ = ω_m"""
    delta = np.asarray(detuning, dtype=float)
    half_kappa_sq = (dev.kappa / 2.0) ** 2
    envelope = half_kappa_sq / ((delta - dev.omega_m) ** 2 + half_kappa_sq)
    return float(envelope) if envelope.ndim == 0 else envelope


def cooperativity(dev: DeviceParams, n_c: float, gamma_i: float) -> float:
    if gamma_i <= 0:
        raise DomainError(f"intrinsic damping must be positive, got {gamma_i}")
    return backaction_rate(dev, dev.omega_m, n_c) / gamma_i


def self_oscillation_threshold(dev: DeviceParams, gamma_i: float) -> float:
    """Photon number at which blue-detuned anti-damping cancels γ_i"""
    if gamma_i < 0:
        raise DomainError(f"intrinsic damping must be non-negative, got {gamma_i}")
    return gamma_i / abs(backaction_rate(dev, -dev.omega_m, 1.0))


def mechanical_q(dev: DeviceParams, gamma_i: float) -> float:
    if gamma_i <= 0:
        raise DomainError(f"intrinsic damping must be positive, got {gamma_i}")
    return dev.omega_m / gamma_i


# Baths and occupancy

def absorption_bath(probe: ProbeState, bath: BathModel, omega_m: float) -> AbsorptionBath:
    """Occupancy, temperature and coupling of the optical-absorption bath at this probe"""
    n_p = bath.n_p(probe.n_c) if probe.n_c > 0 else 0.0
    if n_p <= 0:
        return AbsorptionBath(n_p=0.0, T_p=0.0, gamma_p=0.0)
    T_p = inverse_bose_einstein(omega_m, n_p)
    gamma_p = bath.gamma_p_law(T_p)
    if gamma_p < 0:
        raise DomainError(f"gamma_p law returned a negative rate {gamma_p} at T_p={T_p}")
    return AbsorptionBath(n_p=n_p, T_p=T_p, gamma_p=gamma_p)


def energy_damping(dev: DeviceParams, probe: ProbeState, bath: BathModel) -> float:
    """Lorentzian linewidth γ_0 + γ_p + γ_OM (Hz)"""
    return bath.gamma_0 + absorption_bath(probe, bath, dev.omega_m).gamma_p + gamma_om(dev, probe)


def jitter_width(probe: ProbeState, bath: BathModel, omega_m: float) -> float:
    """Gaussian jitter FWHM γ_G (Hz); 0 without a jitter law"""
    law = bath.jitter_law
    if law is None:
        return 0.0
    if law.variable == "n_c":
        return law(probe.n_c)
    return law(absorption_bath(probe, bath, omega_m).T_p)


def mode_occupancy(dev: DeviceParams, probe: ProbeState, bath: BathModel) -> float:
    """Steady-state mean phonon number of the mechanical mode"""
    n_f = bose_einstein(dev.omega_m, bath.T_f)
    state = absorption_bath(probe, bath, dev.omega_m)
    total = bath.gamma_0 + state.gamma_p + gamma_om(dev, probe)
    if total <= 0:
        raise InstabilityError(
            f"total damping {total:.6g} Hz is not positive at detuning={probe.detuning}, n_c={probe.n_c}"
        )
    return (bath.gamma_0 * n_f + state.gamma_p * state.n_p) / total


def sideband_asymmetry(dev: DeviceParams, n_c: float, bath: BathModel) -> float:
    """ξ = (⟨n⟩_blue + 1)/⟨n⟩_red − 1 for equal transduction gain at ±ω_m"""
    n_red = mode_occupancy(dev, ProbeState.red(dev, n_c), bath)
    n_blue = mode_occupancy(dev, ProbeState.blue(dev, n_c), bath)
    if n_red <= 0:
        raise DomainError("red-detuned occupancy is zero; asymmetry undefined")
    return (n_blue + 1.0) / n_red - 1.0


# Optical drive

def optical_frequency(dev: DeviceParams) -> float:
    return C_LIGHT / dev.lambda_c


def sideband_resolved(dev: DeviceParams) -> bool:
    return dev.sideband_resolved


def cavity_reflection(dev: DeviceParams, delta: ArrayLike) -> ArrayLike:
    """Reflectance |1 − κ_e/(iΔ + κ/2)|² of the single-port cavity"""
    r = 1.0 - dev.kappa_e / (1j * np.asarray(delta, dtype=float) + dev.kappa / 2.0)
    reflectance = np.abs(r) ** 2
    return float(reflectance) if reflectance.ndim == 0 else reflectance


def _photons_per_watt(dev: DeviceParams, delta: float) -> float:
    # angular factors reduce to a single 2π
    return dev.kappa_e / (2.0 * math.pi * H * optical_frequency(dev) * (dev.kappa ** 2 / 4.0 + delta ** 2))


def intracavity_photons(dev: DeviceParams, delta: float, P_in: float) -> float:
    if P_in < 0:
        raise DomainError(f"input power must be non-negative, got {P_in}")
    return P_in * _photons_per_watt(dev, delta)


def input_power_for_photons(dev: DeviceParams, delta: float, n_c: float) -> float:
    """Waveguide power (W) that sustains n_c photons at detuning delta"""
    if n_c < 0:
        raise DomainError(f"photon number must be non-negative, got {n_c}")
    return n_c / _photons_per_watt(dev, delta)
