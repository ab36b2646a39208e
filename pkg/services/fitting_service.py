import logging
import math
from collections import defaultdict
from typing import Callable, Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize
from scipy.interpolate import PchipInterpolator
from scipy.special import voigt_profile

from models.device_models import DeviceParams
from models.fit_models import (
    BathModelFit, CoolingCurvePoint, DetuningAreaFit, FitResult, LineshapeFit, PowerLawFit,
)
from models.spectrum_models import LineshapeParams, Spectrum
from services.optomechanics_service import (
    backaction_rate, backaction_shape, bose_einstein, transduction_envelope,
)
from services.spectra_service import FWHM_TO_SIGMA, voigt_fwhm
from utils.enums import DetuningSign

logger = logging.getLogger(__name__)

MAX_NFEV = 500
XTOL = 1e-12
GTOL = 1e-8
FTOL = 1e-15
NO_PEAK_SIGMA = 3.0
# FWHM of a Lorentzian over the second moment of its above-half-maximum part
HALF_MAX_MOMENT_TO_FWHM = 3.83


class FittingError(Exception):
    """Custom exception for parameter inference"""
    pass


class NoPeakError(FittingError):
    """Spectrum has no peak resolvable above the floor noise"""
    pass


class InsufficientDataError(FittingError, ValueError):
    """Too few points to determine the requested parameters"""
    pass


class FitDomainError(FittingError, ValueError):
    """Data outside the domain of the fitted model"""
    pass


ResidualFn = Callable[[np.ndarray], np.ndarray]


# Generic least squares

def least_squares(model: ResidualFn, init: Mapping[str, float],
                  bounds: Optional[Mapping[str, Tuple[float, float]]] = None,
                  weights: Optional[np.ndarray] = None,
                  scale_covariance: Optional[bool] = None) -> FitResult:
    """Trust-region least squares of weights·model(p) over parameters named by `init`.

    `model` takes the parameter vector in the order of `init` and returns residuals.
    Uncertainties come from (JᵀJ)⁻¹ at the optimum, scaled by the reduced χ² when
    `scale_covariance` is set (default: when no weights are given).
    """
    names = list(init)
    x0 = np.array([float(init[n]) for n in names])
    lower = np.array([(bounds or {}).get(n, (-np.inf, np.inf))[0] for n in names], dtype=float)
    upper = np.array([(bounds or {}).get(n, (-np.inf, np.inf))[1] for n in names], dtype=float)
    x0 = np.clip(x0, lower, upper)
    w = None if weights is None else np.asarray(weights, dtype=float)
    if scale_covariance is None:
        scale_covariance = weights is None

    def weighted(p):
        r = np.asarray(model(p), dtype=float)
        return r * w if w is not None else r

    r0 = weighted(x0)
    if not np.all(np.isfinite(r0)):
        raise FittingError("residuals are not finite at the initial parameters")

    # trf evaluates the Jacobian once at x0 and once at every accepted iterate
    history: List[float] = []

    def jacobian(p):
        r = weighted(p)
        history.append(0.5 * float(r @ r))
        eps = 1.49e-8 * np.maximum(np.abs(p), 1.0)
        return optimize.approx_fprime(p, weighted, eps)

    solution = optimize.least_squares(
        weighted, x0, jac=jacobian, bounds=(lower, upper), method="trf",
        xtol=XTOL, gtol=GTOL, ftol=FTOL, max_nfev=MAX_NFEV,
    )

    warnings: List[str] = []
    converged = bool(solution.success) and solution.status > 0
    if not converged:
        message = f"least squares did not converge after {solution.nfev} evaluations: {solution.message}"
        logger.warning(message)
        warnings.append(message)

    J = np.atleast_2d(solution.jac)
    n_params = len(names)
    if np.linalg.matrix_rank(J) < n_params:
        message = "singular Jacobian at the optimum; uncertainties are unreliable"
        logger.warning(message)
        warnings.append(message)
    covariance = np.linalg.pinv(J.T @ J)
    residual_sq = float(solution.fun @ solution.fun)
    dof = len(solution.fun) - n_params
    if scale_covariance and dof > 0:
        covariance = covariance * (residual_sq / dof)
    elif scale_covariance:
        message = "no degrees of freedom left to estimate the noise; uncertainties are undetermined"
        logger.warning(message)
        warnings.append(message)
        covariance = np.full_like(covariance, np.inf)
    errors = np.sqrt(np.clip(np.diag(covariance), 0.0, None))

    return FitResult(
        parameters={n: float(v) for n, v in zip(names, solution.x)},
        uncertainties={n: float(e) for n, e in zip(names, errors)},
        residual_norm=math.sqrt(residual_sq),
        converged=converged,
        iterations=max(int(solution.njev) - 1, 0),
        warnings=warnings,
        cost_history=history,
    )


# Lineshape fits

class _PeakGuess:
    """Normalised coordinates and moment-based initial values for a single peak"""

    def __init__(self, spec: Spectrum):
        f = spec.frequencies
        y = spec.psd
        self.f_mid = 0.5 * (f[0] + f[-1])
        self.f_scale = 0.5 * (f[-1] - f[0])
        quarter = max(len(y) // 4, 1)
        outer = np.concatenate([y[:quarter], y[-quarter:]])
        floor = float(np.median(outer))
        self.y_scale = abs(floor) if floor != 0 else float(np.max(np.abs(y))) or 1.0
        self.x = (f - self.f_mid) / self.f_scale
        self.y = y / self.y_scale

        self.floor = floor / self.y_scale
        self.noise = float(np.std(outer)) / self.y_scale
        peak_index = int(np.argmax(self.y))
        self.peak = float(self.y[peak_index] - self.floor)
        if self.peak <= NO_PEAK_SIGMA * self.noise or self.peak <= 0:
            raise NoPeakError(
                f"peak {self.peak:.3g} does not exceed {NO_PEAK_SIGMA:g}x floor std {self.noise:.3g}"
            )
        self.center = float(self.x[peak_index])

        excess = self.y - self.floor
        above = excess >= 0.5 * self.peak
        step = self.x[1] - self.x[0]
        if np.count_nonzero(above) >= 3:
            weights = excess[above]
            mean = np.sum(weights * self.x[above]) / np.sum(weights)
            sigma = math.sqrt(np.sum(weights * (self.x[above] - mean) ** 2) / np.sum(weights))
            self.width = max(HALF_MAX_MOMENT_TO_FWHM * sigma, 2.0 * step)
        else:
            self.width = 2.0 * step
        self.area = 0.5 * math.pi * self.peak * self.width

    def to_physical(self, center: float, gamma_L: float, gamma_G: float, area: float, floor: float) -> dict:
        return dict(
            center=self.f_mid + center * self.f_scale,
            gamma_L=gamma_L * self.f_scale,
            gamma_G=gamma_G * self.f_scale,
            area=area * self.y_scale * self.f_scale,
            floor=floor * self.y_scale,
        )


_LINESHAPE_NAMES = ("center", "gamma_L", "gamma_G", "area", "floor")


def _fit_peak(spec: Spectrum, gamma_L: Optional[float], gamma_G: Optional[float]) -> LineshapeFit:
    """Two-pass Voigt fit: unit weights, then weights 1/model for multiplicative noise"""
    guess = _PeakGuess(spec)
    fixed: Dict[str, float] = {}
    if gamma_L is not None:
        fixed["gamma_L"] = gamma_L / guess.f_scale
    if gamma_G is not None:
        fixed["gamma_G"] = gamma_G / guess.f_scale

    # equal widths give a Voigt FWHM of about 1.64 times either one
    both_free = not fixed
    start = dict(
        center=guess.center,
        gamma_L=guess.width / 1.64 if both_free else guess.width,
        gamma_G=guess.width / 1.64 if both_free else guess.width,
        area=guess.area,
        floor=guess.floor,
    )
    free = [n for n in _LINESHAPE_NAMES if n not in fixed]
    init = {n: start[n] for n in free}
    bounds = {"gamma_L": (0.0, np.inf), "gamma_G": (0.0, np.inf), "area": (0.0, np.inf)}

    def curve(p: np.ndarray) -> np.ndarray:
        values = dict(fixed)
        values.update(zip(free, p))
        profile = voigt_profile(guess.x - values["center"], values["gamma_G"] * FWHM_TO_SIGMA,
                                values["gamma_L"] / 2.0)
        return values["floor"] + values["area"] * profile

    def residuals(p: np.ndarray) -> np.ndarray:
        return curve(p) - guess.y

    first = least_squares(residuals, init, bounds)
    model_values = curve(np.array([first.parameters[n] for n in free]))
    weights = 1.0 / np.clip(np.abs(model_values), 1e-12, None)
    result = least_squares(residuals, first.parameters, bounds, weights=weights, scale_covariance=True)

    values = dict(fixed)
    values.update(result.parameters)
    physical = guess.to_physical(**values)
    scales = dict(center=guess.f_scale, gamma_L=guess.f_scale, gamma_G=guess.f_scale,
                  area=guess.y_scale * guess.f_scale, floor=guess.y_scale)
    errors = {n: result.uncertainties.get(n, 0.0) * scales[n] for n in _LINESHAPE_NAMES}

    warnings = list(first.warnings) + list(result.warnings)
    if both_free:
        ratio = physical["gamma_G"] / physical["gamma_L"] if physical["gamma_L"] > 0 else np.inf
        residual_std = float(np.std(residuals(np.array([result.parameters[n] for n in free]))))
        snr = values["area"] / max(residual_std, 1e-300) * voigt_profile(0.0, values["gamma_G"] * FWHM_TO_SIGMA,
                                                                            values["gamma_L"] / 2.0)
        if not 0.1 <= ratio <= 10.0 and snr < 10.0:
            message = (f"Voigt widths weakly identifiable: gamma_G/gamma_L={ratio:.3g} at SNR {snr:.3g}")
            logger.warning(message)
            warnings.append(message)

    fit_result = FitResult(
        parameters=physical,
        uncertainties=errors,
        residual_norm=result.residual_norm,
        converged=first.converged and result.converged,
        iterations=first.iterations + result.iterations,
        warnings=warnings,
        cost_history=result.cost_history,
    )
    return LineshapeFit(params=LineshapeParams(**physical), result=fit_result)


def fit_lorentzian(spec: Spectrum) -> LineshapeFit:
    """Lorentzian peak (gamma_G fixed at 0) on a flat floor"""
    return _fit_peak(spec, gamma_L=None, gamma_G=0.0)


def fit_voigt(spec: Spectrum, gamma_L: Optional[float] = None,
              gamma_G: Optional[float] = None) -> LineshapeFit:
    """Voigt peak with optional fixed Lorentzian or Gaussian width (Hz)"""
    return _fit_peak(spec, gamma_L=gamma_L, gamma_G=gamma_G)


def linewidth_of(fit: LineshapeFit) -> Tuple[float, float]:
    """Voigt FWHM and its 1σ, propagated from the two width uncertainties"""
    gamma_L, gamma_G = fit.params.gamma_L, fit.params.gamma_G
    fwhm = voigt_fwhm(gamma_L, gamma_G)
    root = math.sqrt(0.2166 * gamma_L ** 2 + gamma_G ** 2)
    d_L = 0.5346 + (0.2166 * gamma_L / root if root > 0 else 0.0)
    d_G = gamma_G / root if root > 0 else 0.0
    err = math.hypot(d_L * fit.result.error("gamma_L"), d_G * fit.result.error("gamma_G"))
    return fwhm, err


# Detuning series

def fit_voigt_detuning(detunings: Sequence[float], linewidths: Sequence[float],
                       errors: Optional[Sequence[float]], dev: DeviceParams, n_c: float,
                       cooperativity: float, include_jitter: bool = True) -> FitResult:
    """Linewidth vs detuning with the cooperativity held fixed.

    FWHM(Δ) = voigt_fwhm(γ_i·(1 + C·γ_OM(Δ)/γ_OM(ω_m)), γ_G); γ_i and γ_G are free
    and g₀ follows from C·γ_i = γ_OM(ω_m). With include_jitter=False γ_G is held at 0.
    """
    delta = np.asarray(detunings, dtype=float)
    widths = np.asarray(linewidths, dtype=float)
    if len(delta) != len(widths) or len(delta) < 3:
        raise InsufficientDataError("need at least three (detuning, linewidth) pairs")
    shape = backaction_shape(dev, delta)
    weights = None if errors is None else 1.0 / np.asarray(errors, dtype=float)

    def predict(gamma_i, gamma_G):
        return voigt_fwhm(gamma_i * (1.0 + cooperativity * shape), gamma_G)

    bounds = {"gamma_i": (0.0, np.inf), "gamma_G": (0.0, np.inf)}
    narrowest = float(np.min(widths))
    best: Optional[FitResult] = None
    for share in ((0.2, 0.5, 0.8) if include_jitter else (1.0,)):
        if include_jitter:
            init = {"gamma_i": narrowest * share / (1.0 + cooperativity * float(np.min(shape))),
                    "gamma_G": narrowest * (1.0 - share)}
            result = least_squares(lambda p: predict(p[0], p[1]) - widths, init, bounds, weights)
        else:
            init = {"gamma_i": narrowest / (1.0 + cooperativity * float(np.min(shape)))}
            result = least_squares(lambda p: predict(p[0], 0.0) - widths, init, bounds, weights)
        if best is None or result.residual_norm < best.residual_norm:
            best = result

    gamma_i = best.value("gamma_i")
    gamma_i_err = best.error("gamma_i")
    per_photon = backaction_rate(dev, dev.omega_m, n_c) / dev.g0 ** 2
    g0 = math.sqrt(cooperativity * gamma_i / per_photon)
    g0_err = 0.5 * g0 * gamma_i_err / gamma_i if gamma_i > 0 else float("nan")

    parameters = dict(best.parameters)
    uncertainties = dict(best.uncertainties)
    parameters.setdefault("gamma_G", 0.0)
    uncertainties.setdefault("gamma_G", 0.0)
    parameters.update(g0=g0, cooperativity=cooperativity)
    uncertainties.update(g0=g0_err, cooperativity=0.0)
    return best.model_copy(update={"parameters": parameters, "uncertainties": uncertainties})


def fit_area_vs_detuning(detunings: Sequence[float], areas: Sequence[float], dev: DeviceParams,
                         errors: Optional[Sequence[float]] = None) -> DetuningAreaFit:
    """Cooperativity from sideband areas across a detuning sweep at fixed n_c.

    Red-side model: area = K·T(Δ)/(1 + C·s(Δ)) with T the anti-Stokes transduction
    envelope and s = γ_OM(Δ)/γ_OM(ω_m). If blue-side points are present the model
    becomes G·T±(Δ)·(n₀/(1 + C·s(Δ)) + [Δ < 0]) so that the vacuum term is resolved.
    The null model repeats the fit with C = 0.
    """
    delta = np.asarray(detunings, dtype=float)
    y = np.asarray(areas, dtype=float)
    if len(delta) != len(y) or len(delta) < 3:
        raise InsufficientDataError("need at least three (detuning, area) pairs")
    # areas in W are ~1e-12; fit them in units of the largest one
    y_scale = float(np.max(np.abs(y))) or 1.0
    y = y / y_scale
    shape = backaction_shape(dev, delta)
    blue = delta < 0
    envelope = np.where(blue, transduction_envelope(dev, -delta), transduction_envelope(dev, delta))
    weights = None if errors is None else y_scale / np.asarray(errors, dtype=float)
    lowest_c = -0.9 / max(float(np.max(shape)), 1e-12)

    red_peak = float(np.max(np.where(blue, 0.0, y / envelope)))
    if np.any(blue):
        def residuals_full(p):
            return p[0] * envelope * (p[1] / (1.0 + p[2] * shape) + blue) - y

        def residuals_null(p):
            return p[0] * envelope * (p[1] + blue) - y

        full_init = {"gain": float(np.max(y[blue] / envelope[blue])), "n0": 1.0, "cooperativity": 1.0}
        bounds = {"gain": (0.0, np.inf), "n0": (0.0, np.inf), "cooperativity": (lowest_c, np.inf)}
        full = least_squares(residuals_full, full_init, bounds, weights)
        null = least_squares(residuals_null, {"gain": full_init["gain"], "n0": 1.0},
                             {"gain": (0.0, np.inf), "n0": (0.0, np.inf)}, weights)
    else:
        def residuals_full(p):
            return p[0] * envelope / (1.0 + p[1] * shape) - y

        def residuals_null(p):
            return p[0] * envelope - y

        best: Optional[FitResult] = None
        for c_start in (0.0, 1.0, 5.0):
            start = {"scale": red_peak * (1.0 + c_start), "cooperativity": c_start}
            result = least_squares(residuals_full, start,
                                   {"scale": (0.0, np.inf), "cooperativity": (lowest_c, np.inf)}, weights)
            if best is None or result.residual_norm < best.residual_norm:
                best = result
        full = best
        null = least_squares(residuals_null, {"scale": red_peak}, {"scale": (0.0, np.inf)}, weights)

    full, null = _rescale(full, y_scale, ("gain", "scale")), _rescale(null, y_scale, ("gain", "scale"))
    logger.info(f"Area fit: C = {full.value('cooperativity'):.4g}, "
                f"residual {full.residual_norm:.4g} vs null {null.residual_norm:.4g}")
    return DetuningAreaFit(full=full, null=null)


def _rescale(result: FitResult, factor: float, names: Sequence[str]) -> FitResult:
    """Multiply the named parameters and their errors by factor"""
    parameters = {n: v * factor if n in names else v for n, v in result.parameters.items()}
    uncertainties = {n: v * factor if n in names else v for n, v in result.uncertainties.items()}
    return result.model_copy(update={"parameters": parameters, "uncertainties": uncertainties})


# g0 from cooling curves

def _group_by_photons(points: Iterable[CoolingCurvePoint]) -> Dict[float, Dict[DetuningSign, List[CoolingCurvePoint]]]:
    groups: Dict[float, Dict[DetuningSign, List[CoolingCurvePoint]]] = defaultdict(lambda: defaultdict(list))
    for point in points:
        groups[float(f"{point.n_c:.9g}")][point.detuning_sign].append(point)
    return groups


def _through_origin(n_c: np.ndarray, rates: np.ndarray, errors: Optional[np.ndarray],
                    dev: DeviceParams, method: str) -> FitResult:
    per_photon = backaction_rate(dev, dev.omega_m, 1.0) / dev.g0 ** 2
    weights = None if errors is None else 1.0 / errors
    slope0 = float(np.sum(n_c * rates) / np.sum(n_c ** 2))
    result = least_squares(lambda p: p[0] * n_c - rates, {"slope": slope0}, {"slope": (0.0, np.inf)}, weights)
    slope, slope_err = result.value("slope"), result.error("slope")
    g0 = math.sqrt(slope / per_photon)
    g0_err = 0.5 * g0 * slope_err / slope if slope > 0 else float("nan")
    logger.info(f"g0 from {method}: {g0:.6g} Hz ± {g0_err:.3g} over {len(n_c)} photon numbers")
    return result.model_copy(update={
        "parameters": {**result.parameters, "g0": g0},
        "uncertainties": {**result.uncertainties, "g0": g0_err},
    })


def fit_g0_from_linewidths(points: Sequence[CoolingCurvePoint], dev: DeviceParams,
                           method: Literal["linewidth", "cooperativity"] = "linewidth") -> FitResult:
    """g₀ from the slope of γ_OM against n_c.

    "linewidth": γ_OM = (γ_red − γ_blue)/2 at every n_c probed on both sidebands.
    "cooperativity": C = n_f/⟨n⟩ − 1 from calibrated red-side occupancies of a
    fridge-thermalised mode, then γ_OM = C·γ_red/(1 + C).
    Only κ and ω_m of `dev` are used.
    """
    groups = _group_by_photons(points)
    n_c, rates, errors = [], [], []
    if method == "linewidth":
        for photons, sides in sorted(groups.items()):
            red, blue = sides.get(DetuningSign.RED), sides.get(DetuningSign.BLUE)
            if not red or not blue:
                continue
            lw_red = np.mean([p.linewidth for p in red])
            lw_blue = np.mean([p.linewidth for p in blue])
            err_red = math.sqrt(sum(p.linewidth_err ** 2 for p in red)) / len(red)
            err_blue = math.sqrt(sum(p.linewidth_err ** 2 for p in blue)) / len(blue)
            n_c.append(photons)
            rates.append(0.5 * (lw_red - lw_blue))
            errors.append(0.5 * math.hypot(err_red, err_blue))
        needed = "photon numbers probed on both sidebands"
    elif method == "cooperativity":
        for photons, sides in sorted(groups.items()):
            for p in sides.get(DetuningSign.RED, []):
                n_f = bose_einstein(dev.omega_m, p.T_f)
                if p.occupancy <= 0:
                    continue
                coop = n_f / p.occupancy - 1.0
                coop_err = n_f * p.occupancy_err / p.occupancy ** 2
                share = coop / (1.0 + coop)
                n_c.append(photons)
                rates.append(share * p.linewidth)
                errors.append(math.hypot(share * p.linewidth_err,
                                         p.linewidth * coop_err / (1.0 + coop) ** 2))
        needed = "red-detuned photon numbers"
    else:
        raise FitDomainError(f"unknown g0 method {method!r}")

    if len(set(n_c)) < 2:
        raise InsufficientDataError(f"need at least two distinct {needed}, got {len(set(n_c))}")
    err_array = np.asarray(errors, dtype=float)
    use_errors = err_array if np.all(err_array > 0) else None
    return _through_origin(np.asarray(n_c), np.asarray(rates), use_errors, dev, method)


# Power laws

def fit_power_law(x: Sequence[float], y: Sequence[float],
                  errors: Optional[Sequence[float]] = None) -> PowerLawFit:
    """y = amplitude·x^exponent by weighted linear regression of log y on log x"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise FitDomainError("x and y differ in length")
    if len(x) < 2:
        raise FitDomainError("a power law needs at least two points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise FitDomainError("power-law fits need strictly positive data")
    log_x, log_y = np.log(x), np.log(y)
    weights = None
    if errors is not None:
        errors = np.asarray(errors, dtype=float)
        if np.any(errors <= 0):
            raise FitDomainError("errors must be positive")
        weights = y / errors

    exponent, log_amp = np.polyfit(log_x, log_y, 1, w=weights)
    w = np.ones_like(log_x) if weights is None else weights
    design = np.column_stack([log_x, np.ones_like(log_x)]) * w[:, None]
    cov = np.linalg.pinv(design.T @ design)
    if weights is None:
        residuals = log_y - (exponent * log_x + log_amp)
        cov = cov * (float(residuals @ residuals) / (len(x) - 2) if len(x) > 2 else 0.0)
    exponent_err, log_amp_err = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    amplitude = math.exp(log_amp)
    return PowerLawFit(amplitude=amplitude, exponent=float(exponent),
                       amplitude_err=amplitude * float(log_amp_err), exponent_err=float(exponent_err))


def fit_jitter_law(x: Sequence[float], gamma_G: Sequence[float], errors: Optional[Sequence[float]] = None,
                   mask: Optional[Sequence[bool]] = None) -> PowerLawFit:
    """Power law of the Gaussian jitter width against T_p or n_c over the jitter-dominated points"""
    x = np.asarray(x, dtype=float)
    gamma_G = np.asarray(gamma_G, dtype=float)
    keep = np.ones(len(x), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return fit_power_law(x[keep], gamma_G[keep], None if errors is None else np.asarray(errors)[keep])


def fit_activated_gamma_p(T_p: Sequence[float], gamma_p: Sequence[float],
                          errors: Optional[Sequence[float]] = None) -> FitResult:
    """γ_p = amplitude·T_p·exp(−T_c/T_p); initialised from a straight line in (1/T_p, ln γ_p/T_p)"""
    T_p = np.asarray(T_p, dtype=float)
    gamma_p = np.asarray(gamma_p, dtype=float)
    if len(T_p) < 2 or np.any(T_p <= 0) or np.any(gamma_p <= 0):
        raise FitDomainError("need at least two points with positive T_p and gamma_p")
    slope, intercept = np.polyfit(1.0 / T_p, np.log(gamma_p / T_p), 1)
    init = {"amplitude": math.exp(intercept), "T_c": max(-slope, 0.0)}
    weights = None if errors is None else 1.0 / np.asarray(errors, dtype=float)
    return least_squares(
        lambda p: p[0] * T_p * np.exp(-p[1] / T_p) - gamma_p, init,
        {"amplitude": (0.0, np.inf), "T_c": (0.0, np.inf)}, weights,
    )


# Joint two-temperature bath model

LOG_GAMMA_P_BOUNDS = (math.log(1e-6), math.log(1e8))


class _BathProblem:
    """Vectorised ⟨n⟩(n_c; T_f) for a γ₀ and log γ_p knot table"""

    def __init__(self, points: Sequence[CoolingCurvePoint], dev: DeviceParams,
                 np_amplitude: float, np_exponent: float, knots: np.ndarray):
        self.n_c = np.array([p.n_c for p in points])
        self.occupancy = np.array([p.occupancy for p in points])
        errors = np.array([p.occupancy_err for p in points])
        self.weights = 1.0 / errors if np.all(errors > 0) else None
        self.n_f = np.array([bose_einstein(dev.omega_m, p.T_f) for p in points])
        self.n_p = np_amplitude * self.n_c ** np_exponent
        signs = np.array([int(p.detuning_sign) for p in points], dtype=float)
        self.gamma_om = backaction_rate(dev, signs * dev.omega_m, 1.0) * self.n_c
        self.knots = knots
        self.log_knots = np.log(knots)

    def gamma_p(self, log_gamma_p: np.ndarray) -> np.ndarray:
        if len(self.knots) == 1:
            return np.full_like(self.n_c, math.exp(log_gamma_p[0]))
        spline = PchipInterpolator(self.log_knots, log_gamma_p, extrapolate=True)
        log_n = np.clip(np.log(self.n_c), self.log_knots[0], self.log_knots[-1])
        return np.exp(spline(log_n))

    def predict(self, gamma_0: float, log_gamma_p: np.ndarray) -> np.ndarray:
        gamma_p = self.gamma_p(log_gamma_p)
        total = gamma_0 + gamma_p + self.gamma_om
        # unstable configurations are pushed far from any data
        safe = np.where(total > 0, total, np.nan)
        with np.errstate(invalid="ignore", divide="ignore"):
            prediction = (gamma_0 * self.n_f + gamma_p * self.n_p) / safe
        return np.where(np.isfinite(prediction), prediction, 1e6)

    def residuals(self, gamma_0: float, log_gamma_p: np.ndarray) -> np.ndarray:
        return self.predict(gamma_0, log_gamma_p) - self.occupancy

    def chi2(self, gamma_0: float, log_gamma_p: np.ndarray) -> float:
        r = self.residuals(gamma_0, log_gamma_p)
        if self.weights is not None:
            r = r * self.weights
        return float(r @ r)


def _knot_grid(n_c: np.ndarray, mode: str, knots_per_decade: float) -> np.ndarray:
    if mode == "per_point":
        return np.unique(np.array([float(f"{v:.9g}") for v in n_c]))
    if mode != "spline":
        raise FitDomainError(f"unknown bath-model mode {mode!r}")
    lo, hi = float(np.min(n_c)), float(np.max(n_c))
    if hi <= lo:
        return np.array([lo])
    count = max(int(math.ceil(math.log10(hi / lo) * knots_per_decade)) + 1, 2)
    return np.geomspace(lo, hi, count)


def _initial_gamma_p(problem: _BathProblem, gamma_0: float, points: Sequence[CoolingCurvePoint]) -> np.ndarray:
    """Invert ⟨n⟩ for γ_p on the coldest dataset, then interpolate onto the knots in log-log"""
    coldest = min(p.T_f for p in points)
    mask = np.array([p.T_f == coldest for p in points])
    n_c = problem.n_c[mask]
    occupancy = problem.occupancy[mask]
    n_p, n_f, gamma_om = problem.n_p[mask], problem.n_f[mask], problem.gamma_om[mask]
    denominator = n_p - occupancy
    with np.errstate(divide="ignore", invalid="ignore"):
        estimate = (occupancy * (gamma_0 + gamma_om) - gamma_0 * n_f) / denominator
    good = np.isfinite(estimate) & (estimate > 0) & (denominator > 0)
    if np.count_nonzero(good) == 0:
        return np.full(len(problem.knots), math.log(max(gamma_0, 1.0)))
    order = np.argsort(n_c[good])
    log_estimate = np.interp(problem.log_knots, np.log(n_c[good][order]), np.log(estimate[good][order]))
    return np.clip(log_estimate, *LOG_GAMMA_P_BOUNDS)


def _fit_knots(problem: _BathProblem, gamma_0: float, log_start: np.ndarray) -> FitResult:
    """Best γ_p knots with γ₀ held fixed"""
    init = {f"log_gamma_p_{k}": v for k, v in enumerate(log_start)}
    bounds = {name: LOG_GAMMA_P_BOUNDS for name in init}
    return least_squares(lambda p: problem.residuals(gamma_0, p), init, bounds, problem.weights)


def fit_bath_model(datasets: Sequence[Sequence[CoolingCurvePoint]], dev: DeviceParams,
                   np_amplitude: float, np_exponent: float = 0.25,
                   mode: Literal["spline", "per_point"] = "spline", n_starts: int = 1,
                   knots_per_decade: float = 4.0) -> BathModelFit:
    """Joint fit of γ₀ and a γ_p(n_c) table to cooling curves at several fridge temperatures.

    ⟨n⟩ = (γ₀n_f + γ_p n_p)/(γ₀ + γ_p + γ_OM) with n_p = np_amplitude·n_c^np_exponent;
    γ_p is positive via its logarithm at the knots and PCHIP-interpolated in log-log.
    The γ₀ interval comes from the profile likelihood at Δχ² = 1.
    """
    points = [p for dataset in datasets for p in dataset]
    if len(points) < 3:
        raise InsufficientDataError("bath-model fits need at least three cooling-curve points")
    warnings: List[str] = []
    temperatures = sorted({p.T_f for p in points})
    if len(temperatures) < 2:
        message = ("single fridge temperature: gamma_0 and gamma_p are not separately "
                   "identifiable from occupancies alone")
        logger.warning(message)
        warnings.append(message)

    n_c_all = np.array([p.n_c for p in points])
    knots = _knot_grid(n_c_all, mode, knots_per_decade)
    problem = _BathProblem(points, dev, np_amplitude, np_exponent, knots)
    n_params = 1 + len(knots)
    if len(points) <= n_params:
        raise InsufficientDataError(f"{len(points)} points cannot determine {n_params} parameters")

    starts = [100.0] if n_starts <= 1 else list(np.geomspace(10.0, 3000.0, n_starts))
    best: Optional[FitResult] = None
    for index, gamma_0_start in enumerate(starts):
        log_start = _initial_gamma_p(problem, gamma_0_start, points)
        init = {"gamma_0": gamma_0_start}
        init.update({f"log_gamma_p_{k}": v for k, v in enumerate(log_start)})
        bounds = {"gamma_0": (0.0, np.inf)}
        bounds.update({f"log_gamma_p_{k}": LOG_GAMMA_P_BOUNDS for k in range(len(knots))})
        result = least_squares(lambda p: problem.residuals(p[0], p[1:]), init, bounds, problem.weights)
        logger.info(f"Bath-model start {index + 1}/{len(starts)}: gamma_0={result.value('gamma_0'):.4g} Hz, "
                    f"residual {result.residual_norm:.4g}")
        if best is None or result.residual_norm < best.residual_norm:
            best = result

    gamma_0 = best.value("gamma_0")
    log_gamma_p = np.array([best.value(f"log_gamma_p_{k}") for k in range(len(knots))])
    gamma_p = np.exp(log_gamma_p)
    gamma_p_err = gamma_p * np.array([best.error(f"log_gamma_p_{k}") for k in range(len(knots))])

    if np.all(problem.gamma_om > 10.0 * (gamma_0 + problem.gamma_p(log_gamma_p))):
        message = "back-action dominates every point (gamma_OM >> gamma_0 + gamma_p); bath couplings unconstrained"
        logger.warning(message)
        warnings.append(message)

    interval = _profile_gamma_0(problem, gamma_0, log_gamma_p, best.error("gamma_0"))
    logger.info(f"Bath-model fit: gamma_0 = {gamma_0:.4g} Hz, profile interval "
                f"[{interval[0]:.4g}, {interval[1]:.4g}] Hz over {len(knots)} knots")

    result = best.model_copy(update={"warnings": list(best.warnings) + warnings})
    return BathModelFit(
        gamma_0=gamma_0,
        gamma_0_err=0.5 * (interval[1] - interval[0]),
        gamma_0_interval=list(interval),
        knots_n_c=[float(k) for k in knots],
        gamma_p=[float(g) for g in gamma_p],
        gamma_p_err=[float(e) for e in gamma_p_err],
        np_amplitude=np_amplitude,
        np_exponent=np_exponent,
        omega_m=dev.omega_m,
        result=result,
    )


def _profile_gamma_0(problem: _BathProblem, gamma_0: float, log_gamma_p: np.ndarray,
                     quadratic_err: float) -> Tuple[float, float]:
    """Points where the knot-minimised χ² rises by one (scaled by χ²/dof without errors)"""
    chi2_min = problem.chi2(gamma_0, log_gamma_p)
    threshold = 1.0
    if problem.weights is None:
        dof = max(len(problem.n_c) - 1 - len(problem.knots), 1)
        threshold = chi2_min / dof

    def excess(g0: float) -> float:
        knots = _fit_knots(problem, g0, log_gamma_p)
        profile = np.array([knots.value(f"log_gamma_p_{k}") for k in range(len(problem.knots))])
        return problem.chi2(g0, profile) - chi2_min - threshold

    step = quadratic_err if np.isfinite(quadratic_err) and quadratic_err > 0 else max(0.1 * gamma_0, 1.0)

    upper_edge = gamma_0 + step
    for _ in range(30):
        if excess(upper_edge) > 0:
            break
        upper_edge = gamma_0 + 2.0 * (upper_edge - gamma_0)
    upper = optimize.brentq(excess, gamma_0, upper_edge, xtol=1e-6 * max(gamma_0, 1.0)) \
        if excess(upper_edge) > 0 else upper_edge

    lower = 0.0
    if gamma_0 > 0 and excess(0.0) > 0:
        lower_edge = max(gamma_0 - step, 0.0)
        while excess(lower_edge) <= 0 and lower_edge > 0:
            lower_edge = max(gamma_0 - 2.0 * (gamma_0 - lower_edge), 0.0)
        lower = optimize.brentq(excess, lower_edge, gamma_0, xtol=1e-6 * max(gamma_0, 1.0))
    return lower, upper
