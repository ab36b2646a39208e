import logging
import math
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

from database.report_store import ReportStore, frame_to_csv
from models.config_models import Provenance, ReportBundle, RunConfig, config_hash
from models.device_models import ProbeState
from models.fit_models import FitResult
from services.fitting_service import FittingError, fit_activated_gamma_p, fit_lorentzian, fit_voigt, linewidth_of
from services.optomechanics_service import (
    PhysicsError, absorption_bath, bose_einstein, gamma_om, mode_occupancy, sideband_asymmetry,
)
from services.phonon_service import (
    PhononError, cutoff_ratio, gamma_p_high_T, gamma_p_integral, gamma_p_low_T, high_t_coefficient, rate_scale,
)
from services.spectra_service import (
    SpectraError, add_measurement_noise, calibrate_occupancy, heterodyne_lineshape, heterodyne_psd,
    signal_gain, voigt_fwhm,
)
from utils.constants import TOOLKIT_VERSION
from utils.enums import DetuningSign, SweepVariable

logger = logging.getLogger(__name__)

PROGRESS_EVERY = 10

SWEEP_COLUMNS = [
    "t_f_k", "sweep_variable", "sweep_value", "detuning_hz", "n_c", "detuning_sign", "n_f", "n_p",
    "t_p_k", "gamma_0_hz", "gamma_p_hz", "gamma_om_hz", "gamma_l_hz", "gamma_g_hz", "occupancy",
    "area_w", "status",
]
COOLING_COLUMNS = ["t_f_k", "n_c", "detuning_sign", "occupancy", "occupancy_err", "linewidth_hz", "linewidth_err"]
ASYMMETRY_COLUMNS = ["t_f_k", "n_c", "xi_model", "xi_measured", "xi_err"]
DETUNING_COLUMNS = [
    "t_f_k", "detuning_hz", "n_c", "area_w", "area_err", "linewidth_hz", "linewidth_err",
    "gamma_l_hz", "gamma_g_hz",
]
PHONON_COLUMNS = [
    "t_p_k", "x_c", "integral", "gamma_p_hz", "gamma_p_low_t_hz", "gamma_p_high_t_hz",
    "low_t_ratio", "high_t_ratio", "high_t_limit", "error",
]


class SimulationError(Exception):
    """Custom exception for simulation pipelines"""
    pass


class ConfigError(SimulationError, ValueError):
    """Run configuration cannot be executed as given"""
    pass


class SweepPoint(NamedTuple):
    index: int
    T_f: float
    sweep_value: float
    probe: ProbeState
    sign: DetuningSign


def provenance(command: str, payload: Dict[str, Any]) -> Provenance:
    return Provenance(
        command=command,
        config_hash=config_hash(payload),
        version=TOOLKIT_VERSION,
        timestamp=datetime.now(timezone.utc),
    )


class SimulationService:
    """Forward synthesis of sweeps and phonon-bath tables from a RunConfig"""

    def __init__(self, store: Optional[ReportStore] = None):
        self.store = store

    # Sweep construction
    def _photons_for_bath_temperature(self, config: RunConfig, T_p: float) -> float:
        bath = config.bath
        n_p = bose_einstein(config.device.omega_m, T_p)
        if n_p <= 0:
            raise ConfigError(f"T_p={T_p} K gives no absorption-bath occupancy")
        return (n_p / bath.np_amplitude) ** (1.0 / bath.np_exponent)

    def build_points(self, config: RunConfig) -> List[SweepPoint]:
        """Sweep points in output order: fridge temperature, sweep value, sideband"""
        dev = config.device
        values = config.sweep.values()
        variable = config.sweep.variable
        points: List[SweepPoint] = []

        if variable == SweepVariable.DETUNING:
            for T_f in config.temperatures():
                for v in values:
                    sign = DetuningSign(int(np.sign(v)))
                    points.append(SweepPoint(len(points), T_f, float(v), ProbeState(detuning=float(v), n_c=config.n_c), sign))
            return points

        temperatures = [float(v) for v in values] if variable == SweepVariable.T_F else config.temperatures()
        for T_f in temperatures:
            sweep_values = [T_f] if variable == SweepVariable.T_F else values
            for v in sweep_values:
                if variable == SweepVariable.N_C:
                    n_c = float(v)
                elif variable == SweepVariable.T_P:
                    n_c = self._photons_for_bath_temperature(config, float(v))
                else:
                    n_c = config.n_c
                for sign in config.detunings:
                    probe = ProbeState(detuning=int(sign) * dev.omega_m, n_c=n_c)
                    points.append(SweepPoint(len(points), T_f, float(v), probe, sign))
        return points

    def _grid(self, config: RunConfig, fwhm: float) -> np.ndarray:
        half_span = max(0.5 * config.spectrum.min_span, config.spectrum.linewidths * fwhm)
        center = config.calibration.beat_frequency
        return np.linspace(center - half_span, center + half_span, config.spectrum.points)

    # One sweep point
    def simulate_point(self, config: RunConfig, point: SweepPoint) -> Dict[str, Any]:
        """Truth, synthesized spectrum and its fit for one point; errors become a status"""
        dev, calib = config.device, config.calibration
        bath = config.bath.with_fridge(point.T_f)
        probe = point.probe
        row: Dict[str, Any] = {
            "t_f_k": point.T_f,
            "sweep_variable": config.sweep.variable.value,
            "sweep_value": point.sweep_value,
            "detuning_hz": probe.detuning,
            "n_c": probe.n_c,
            "detuning_sign": int(point.sign),
            "n_f": bose_einstein(dev.omega_m, point.T_f),
            "gamma_0_hz": bath.gamma_0,
        }
        outcome: Dict[str, Any] = {"row": row, "point": point}
        try:
            state = absorption_bath(probe, bath, dev.omega_m)
            row.update(n_p=state.n_p, t_p_k=state.T_p, gamma_p_hz=state.gamma_p, gamma_om_hz=gamma_om(dev, probe))
            occupancy = mode_occupancy(dev, probe, bath)
            shape = heterodyne_lineshape(dev, probe, bath, calib)
            row.update(gamma_l_hz=shape.gamma_L, gamma_g_hz=shape.gamma_G, occupancy=occupancy, area_w=shape.area)

            spec = heterodyne_psd(dev, probe, bath, calib, self._grid(config, voigt_fwhm(shape.gamma_L, shape.gamma_G)))
            if config.noise.n_avg is not None:
                spec = add_measurement_noise(spec, config.noise.seed, config.noise.n_avg, index=point.index)
            outcome["spectrum"] = spec

            fit = fit_voigt(spec) if bath.jitter_law is not None else fit_lorentzian(spec)
            outcome["fit"] = fit
            gain = signal_gain(dev, probe, calib)
            measured = calibrate_occupancy(fit.params.area, calib, dev, probe)
            outcome["measured"] = {
                "occupancy": measured,
                "occupancy_err": fit.result.error("area") / gain,
                "linewidth_hz": fit.params.gamma_L,
                "linewidth_err": fit.result.error("gamma_L"),
                "fwhm": linewidth_of(fit),
                "area": (fit.params.area, fit.result.error("area")),
                "converged": fit.result.converged,
            }
            row["status"] = "ok" if fit.result.converged else "fit-not-converged"
        except (PhysicsError, SpectraError, FittingError) as e:
            logger.warning(f"Sweep point {point.index} failed: {str(e)}")
            row["status"] = type(e).__name__
            outcome["error"] = str(e)
        return outcome

    # Commands
    def cmd_simulate(self, config: RunConfig) -> ReportBundle:
        """Synthesize every sweep point, write spectra and derived series"""
        points = self.build_points(config)
        logger.info(f"Starting simulation of {len(points)} sweep points with {config.workers} workers")
        outcomes: List[Dict[str, Any]] = []
        with ThreadPoolExecutor(max_workers=config.workers) as executor:
            for count, outcome in enumerate(executor.map(lambda p: self.simulate_point(config, p), points), 1):
                outcomes.append(outcome)
                if count % PROGRESS_EVERY == 0 or count == len(points):
                    logger.info(f"Simulated {count}/{len(points)} sweep points")

        files: List[str] = []
        if self.store is not None and config.outputs.write_spectra:
            for outcome in outcomes:
                if "spectrum" in outcome:
                    relative = f"spectra/point_{outcome['point'].index:04d}.csv"
                    self.store.write_spectrum(outcome["spectrum"], relative)
                    files.append(relative)

        tables = {"sweep": frame_to_csv(pd.DataFrame([o["row"] for o in outcomes], columns=SWEEP_COLUMNS))}
        cooling = self._cooling_table(outcomes)
        tables["cooling_curves"] = frame_to_csv(cooling)
        if config.sweep.variable == SweepVariable.DETUNING:
            tables["detuning_series"] = frame_to_csv(self._detuning_table(outcomes))
        asymmetry = self._asymmetry_table(config, outcomes)
        if asymmetry is not None:
            tables["asymmetry"] = frame_to_csv(asymmetry)

        failures = [
            {"index": o["point"].index, "t_f_k": o["point"].T_f, "sweep_value": o["point"].sweep_value,
             "detuning_sign": int(o["point"].sign), "error": o["error"]}
            for o in outcomes if "error" in o
        ]
        payload = config.model_dump(mode="json")
        logger.info(f"Simulation finished: {len(outcomes) - len(failures)} ok, {len(failures)} failed")
        return ReportBundle(
            tables=tables,
            provenance=provenance("simulate", payload),
            config=payload,
            files=files,
            failures=failures,
        )

    def _cooling_table(self, outcomes: List[Dict[str, Any]]) -> pd.DataFrame:
        rows = []
        for o in outcomes:
            m = o.get("measured")
            if m is None or o["point"].probe.n_c <= 0:
                continue
            rows.append({
                "t_f_k": o["point"].T_f,
                "n_c": o["point"].probe.n_c,
                "detuning_sign": int(o["point"].sign),
                "occupancy": m["occupancy"],
                "occupancy_err": m["occupancy_err"],
                "linewidth_hz": m["linewidth_hz"],
                "linewidth_err": m["linewidth_err"],
            })
        return pd.DataFrame(rows, columns=COOLING_COLUMNS)

    def _detuning_table(self, outcomes: List[Dict[str, Any]]) -> pd.DataFrame:
        rows = []
        for o in outcomes:
            m = o.get("measured")
            if m is None:
                continue
            fwhm, fwhm_err = m["fwhm"]
            area, area_err = m["area"]
            rows.append({
                "t_f_k": o["point"].T_f,
                "detuning_hz": o["point"].probe.detuning,
                "n_c": o["point"].probe.n_c,
                "area_w": area,
                "area_err": area_err,
                "linewidth_hz": fwhm,
                "linewidth_err": fwhm_err,
                "gamma_l_hz": o["fit"].params.gamma_L,
                "gamma_g_hz": o["fit"].params.gamma_G,
            })
        return pd.DataFrame(rows, columns=DETUNING_COLUMNS)

    def _asymmetry_table(self, config: RunConfig, outcomes: List[Dict[str, Any]]) -> Optional[pd.DataFrame]:
        """ξ from the model and from calibrated red/blue occupancies, for n_c-like sweeps"""
        if config.sweep.variable == SweepVariable.DETUNING:
            return None
        if not {DetuningSign.RED, DetuningSign.BLUE} <= set(config.detunings):
            return None
        pairs: Dict[Tuple[float, float], Dict[DetuningSign, Dict[str, Any]]] = {}
        for o in outcomes:
            key = (o["point"].T_f, o["point"].probe.n_c)
            pairs.setdefault(key, {})[o["point"].sign] = o
        rows = []
        for (T_f, n_c), sides in pairs.items():
            red, blue = sides.get(DetuningSign.RED), sides.get(DetuningSign.BLUE)
            if red is None or blue is None or "measured" not in red or "measured" not in blue:
                continue
            try:
                xi_model = sideband_asymmetry(config.device, n_c, config.bath.with_fridge(T_f))
            except PhysicsError as e:
                logger.warning(f"No model asymmetry at T_f={T_f}, n_c={n_c}: {str(e)}")
                continue
            n_r, err_r = red["measured"]["occupancy"], red["measured"]["occupancy_err"]
            n_b, err_b = blue["measured"]["occupancy"], blue["measured"]["occupancy_err"]
            if n_r <= 0:
                continue
            xi = (n_b + 1.0) / n_r - 1.0
            xi_err = math.hypot(err_b / n_r, (n_b + 1.0) * err_r / n_r ** 2)
            rows.append({"t_f_k": T_f, "n_c": n_c, "xi_model": xi_model, "xi_measured": xi, "xi_err": xi_err})
        return pd.DataFrame(rows, columns=ASYMMETRY_COLUMNS)

    def phonon_row(self, config: RunConfig, T_p: float) -> Dict[str, Any]:
        bath = config.phonon.bath
        omega_m = config.phonon.omega_m or config.device.omega_m
        row: Dict[str, Any] = {column: float("nan") for column in PHONON_COLUMNS}
        row.update(t_p_k=T_p, error="")
        try:
            x_c = cutoff_ratio(bath, T_p)
            exact = gamma_p_integral(bath, omega_m, T_p)
            row.update(x_c=x_c, gamma_p_hz=exact, integral=exact / rate_scale(bath, omega_m, T_p))
            if bath.integrand == "power_law":
                low = gamma_p_low_T(bath, omega_m, T_p)
                high = gamma_p_high_T(bath, omega_m, T_p)
                row.update(
                    gamma_p_low_t_hz=low, gamma_p_high_t_hz=high,
                    low_t_ratio=low / exact if exact > 0 else float("nan"),
                    high_t_ratio=high / exact if exact > 0 else float("nan"),
                    high_t_limit=high_t_coefficient(bath.a),
                )
        except (PhononError, PhysicsError) as e:
            row["error"] = str(e)
        return row

    def cmd_phonon(self, config: RunConfig) -> ReportBundle:
        """Exact γ_p(T_p) against both asymptotes over the configured T_p grid"""
        grid = config.phonon.T_p
        logger.info(f"Tabulating the continuum bath over {len(grid)} temperatures")
        with ThreadPoolExecutor(max_workers=config.workers) as executor:
            rows = list(executor.map(lambda t: self.phonon_row(config, t), grid))
        frame = pd.DataFrame(rows, columns=PHONON_COLUMNS)

        fits: Dict[str, FitResult] = {}
        warnings: List[str] = []
        cold = frame[(frame["x_c"] >= 3.0) & (frame["gamma_p_hz"] > 0)]
        if len(cold) >= 3:
            try:
                fits["activated"] = fit_activated_gamma_p(cold["t_p_k"], cold["gamma_p_hz"])
            except FittingError as e:
                warnings.append(f"activated fit failed: {str(e)}")
        payload = config.model_dump(mode="json")
        return ReportBundle(
            tables={"phonon": frame_to_csv(frame)},
            fits=fits,
            provenance=provenance("phonon", payload),
            config=payload,
            warnings=warnings,
            failures=[{"t_p_k": r["t_p_k"], "error": r["error"]} for r in rows if r["error"]],
        )
