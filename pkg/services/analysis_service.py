import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from database.report_store import ReportStore, TableParseError, frame_to_csv
from models.config_models import FitOptions, ReportBundle
from models.device_models import ProbeState
from models.fit_models import BathModelFit, CoolingCurvePoint, FitResult, LineshapeFit, PowerLawFit
from models.spectrum_models import Spectrum
from services.fitting_service import (
    FittingError, fit_area_vs_detuning, fit_bath_model, fit_g0_from_linewidths, fit_lorentzian,
    fit_power_law, fit_voigt, fit_voigt_detuning,
)
from services.optomechanics_service import (
    PhysicsError, backaction_rate, backaction_shape, mode_occupancy, sideband_asymmetry,
    transduction_envelope,
)
from services.simulation_service import COOLING_COLUMNS, provenance
from services.spectra_service import SpectraError, calibrate_occupancy, voigt_fwhm, voigt_psd
from utils.enums import DetuningSign, FitMode, SpectrumUnit

logger = logging.getLogger(__name__)

OVERLAY_OVERSAMPLE = 4


def power_law_result(fit: PowerLawFit, x: np.ndarray, y: np.ndarray) -> FitResult:
    """FitResult view of a log-log regression; residual norm is measured in log space"""
    residuals = np.log(y) - np.log(fit(x))
    return FitResult(
        parameters={"amplitude": fit.amplitude, "exponent": fit.exponent},
        uncertainties={"amplitude": fit.amplitude_err, "exponent": fit.exponent_err},
        residual_norm=float(np.linalg.norm(residuals)),
        converged=True,
        iterations=0,
    )


def cooling_points(frame: pd.DataFrame) -> List[CoolingCurvePoint]:
    """Cooling-curve rows as points; rows with non-finite values or n_c = 0 are skipped"""
    usable = np.isfinite(frame[COOLING_COLUMNS].to_numpy(dtype=float)).all(axis=1) & (frame["n_c"] > 0).to_numpy()
    if not usable.all():
        logger.warning(f"Skipping {int((~usable).sum())} cooling-curve rows with missing values")
    frame = frame[usable]
    return [
        CoolingCurvePoint(
            n_c=row.n_c,
            occupancy=row.occupancy,
            occupancy_err=row.occupancy_err,
            linewidth=row.linewidth_hz,
            linewidth_err=row.linewidth_err,
            detuning_sign=DetuningSign(int(row.detuning_sign)),
            T_f=row.t_f_k,
        )
        for row in frame.itertuples(index=False)
    ]


class AnalysisService:
    """Dispatches fit modes over spectrum files or series tables and assembles the report"""

    def __init__(self, store: Optional[ReportStore] = None):
        self.store = store or ReportStore(".")

    # Input loading
    def _spectrum_paths(self, inputs: List[str]) -> List[Path]:
        paths: List[Path] = []
        for entry in inputs:
            path = Path(entry)
            if path.is_dir():
                nested = sorted(path.glob("*.csv")) or sorted((path / "spectra").glob("*.csv"))
                paths.extend(nested)
            else:
                paths.append(path)
        return paths

    def _series(self, options: FitOptions, numeric: List[str]) -> pd.DataFrame:
        if not options.inputs:
            raise TableParseError("<inputs>", None, f"{options.mode.value} fits need an input table")
        frames = [self.store.read_table(path, numeric) for path in options.inputs]
        return pd.concat(frames, ignore_index=True)

    @staticmethod
    def series_columns(options: FitOptions) -> List[str]:
        """Numeric columns a series fit mode reads"""
        if options.mode == FitMode.POWER_LAW:
            return [options.x_column, options.y_column] + ([options.error_column] if options.error_column else [])
        if options.mode == FitMode.DETUNING:
            return ["detuning_hz", "n_c", "area_w", "linewidth_hz"]
        return list(COOLING_COLUMNS)

    def cmd_fit(self, options: FitOptions) -> ReportBundle:
        """Fit every input with the requested mode; fit failures are recorded, not raised"""
        logger.info(f"Starting {options.mode.value} fit over {len(options.inputs)} inputs")
        if options.mode in (FitMode.LORENTZIAN, FitMode.VOIGT):
            spectra = [(p.stem, self.store.read_spectrum(p)) for p in self._spectrum_paths(options.inputs)]
            return self.fit_spectra(options, spectra)
        return self.fit_series(options, self._series(options, self.series_columns(options)))

    # Spectra
    def _fit_one_spectrum(self, options: FitOptions, name: str, spec: Spectrum) -> Dict[str, Any]:
        try:
            fit = fit_voigt(spec) if options.mode == FitMode.VOIGT else fit_lorentzian(spec)
        except FittingError as e:
            logger.warning(f"Fit of {name} failed: {str(e)}")
            return {"name": name, "error": str(e)}
        return {"name": name, "spectrum": spec, "fit": fit}

    def fit_spectra(self, options: FitOptions, spectra: List[Tuple[str, Spectrum]]) -> ReportBundle:
        with ThreadPoolExecutor(max_workers=options.workers) as executor:
            outcomes = list(executor.map(lambda item: self._fit_one_spectrum(options, *item), spectra))

        tables: Dict[str, str] = {}
        fits: Dict[str, FitResult] = {}
        summary = []
        failures = []
        for outcome in outcomes:
            name = outcome["name"]
            if "error" in outcome:
                failures.append({"input": name, "error": outcome["error"]})
                continue
            spec: Spectrum = outcome["spectrum"]
            fit: LineshapeFit = outcome["fit"]
            fits[name] = fit.result
            tables[f"{name}_residuals"], tables[f"{name}_overlay"] = self._lineshape_tables(spec, fit)
            summary.append(self._lineshape_summary(options, name, spec, fit))

        tables["lineshapes"] = frame_to_csv(pd.DataFrame(summary, columns=[
            "input", "center_hz", "gamma_l_hz", "gamma_g_hz", "area", "floor", "linewidth_hz",
            "occupancy", "converged",
        ]))
        return self._bundle(options, tables, fits, failures=failures)

    def _lineshape_tables(self, spec: Spectrum, fit: LineshapeFit) -> Tuple[str, str]:
        model = voigt_psd(fit.params, spec.frequencies)
        residuals = pd.DataFrame({
            "frequency_hz": spec.frequencies, "psd": spec.psd, "model": model, "residual": spec.psd - model,
        })
        dense = np.linspace(spec.frequencies[0], spec.frequencies[-1], OVERLAY_OVERSAMPLE * len(spec.values))
        overlay = pd.DataFrame({"frequency_hz": dense, "model": voigt_psd(fit.params, dense)})
        return frame_to_csv(residuals), frame_to_csv(overlay)

    def _lineshape_summary(self, options: FitOptions, name: str, spec: Spectrum, fit: LineshapeFit) -> Dict[str, Any]:
        occupancy = float("nan")
        meta = spec.metadata
        if meta.n_c > 0 and spec.unit == SpectrumUnit.DETECTOR:
            try:
                probe = ProbeState(detuning=meta.detuning, n_c=meta.n_c)
                occupancy = calibrate_occupancy(fit.params.area, options.calibration, options.device, probe)
            except SpectraError as e:
                logger.warning(f"No calibrated occupancy for {name}: {str(e)}")
        return {
            "input": name,
            "center_hz": fit.params.center,
            "gamma_l_hz": fit.params.gamma_L,
            "gamma_g_hz": fit.params.gamma_G,
            "area": fit.params.area,
            "floor": fit.params.floor,
            "linewidth_hz": voigt_fwhm(fit.params.gamma_L, fit.params.gamma_G),
            "occupancy": occupancy,
            "converged": fit.result.converged,
        }

    # Series
    def fit_series(self, options: FitOptions, frame: pd.DataFrame) -> ReportBundle:
        try:
            if options.mode == FitMode.POWER_LAW:
                return self._fit_power_law(options, frame)
            if options.mode == FitMode.DETUNING:
                return self._fit_detuning(options, frame)
            if options.mode == FitMode.G0:
                return self._fit_g0(options, frame)
            if options.mode == FitMode.BATH_MODEL:
                return self._fit_bath(options, frame)
        except FittingError as e:
            logger.warning(f"{options.mode.value} fit failed: {str(e)}")
            return self._bundle(options, {}, {}, failures=[{"input": ",".join(options.inputs), "error": str(e)}])
        raise FittingError(f"mode {options.mode.value} does not take series input")

    def _fit_power_law(self, options: FitOptions, frame: pd.DataFrame) -> ReportBundle:
        x = frame[options.x_column].to_numpy(dtype=float)
        y = frame[options.y_column].to_numpy(dtype=float)
        errors = frame[options.error_column].to_numpy(dtype=float) if options.error_column else None
        fit = fit_power_law(x, y, errors)
        model = fit(x)
        residuals = pd.DataFrame({"x": x, "y": y, "model": model, "residual": y - model})
        dense = np.geomspace(x.min(), x.max(), 200)
        overlay = pd.DataFrame({"x": dense, "model": fit(dense)})
        return self._bundle(options, {
            "power_law_residuals": frame_to_csv(residuals),
            "power_law_overlay": frame_to_csv(overlay),
        }, {"power_law": power_law_result(fit, x, y)})

    def _fit_detuning(self, options: FitOptions, frame: pd.DataFrame) -> ReportBundle:
        dev = options.device
        frame = frame.sort_values("detuning_hz", kind="mergesort")
        delta = frame["detuning_hz"].to_numpy(dtype=float)
        areas = frame["area_w"].to_numpy(dtype=float)
        widths = frame["linewidth_hz"].to_numpy(dtype=float)
        area_err = self._optional_errors(frame, "area_err")
        width_err = self._optional_errors(frame, "linewidth_err")
        n_c = float(frame["n_c"].iloc[0])

        area_fit = fit_area_vs_detuning(delta, areas, dev, area_err)
        cooperativity = options.cooperativity if options.cooperativity is not None else area_fit.cooperativity
        voigt = fit_voigt_detuning(delta, widths, width_err, dev, n_c, cooperativity, include_jitter=options.include_jitter)
        fits = {"area_vs_detuning": area_fit.full, "area_null": area_fit.null, "voigt_detuning": voigt}
        warnings = []
        if not area_fit.prefers_backaction:
            warnings.append("null model without back-action fits the areas at least as well")
        if options.include_jitter:
            fits["voigt_detuning_no_jitter"] = fit_voigt_detuning(
                delta, widths, width_err, dev, n_c, cooperativity, include_jitter=False,
            )

        def area_model(d, result: FitResult):
            shape = backaction_shape(dev, d)
            blue = d < 0
            envelope = np.where(blue, transduction_envelope(dev, -d), transduction_envelope(dev, d))
            c = result.parameters.get("cooperativity", 0.0)
            if "gain" in result.parameters:
                return result.value("gain") * envelope * (result.value("n0") / (1.0 + c * shape) + blue)
            return result.value("scale") * envelope / (1.0 + c * shape)

        def width_model(d, result: FitResult):
            shape = backaction_shape(dev, d)
            return voigt_fwhm(result.value("gamma_i") * (1.0 + cooperativity * shape), result.value("gamma_G"))

        dense = np.linspace(delta.min(), delta.max(), 400)
        residuals = pd.DataFrame({
            "detuning_hz": delta,
            "area_w": areas,
            "area_model": area_model(delta, area_fit.full),
            "area_null": area_model(delta, area_fit.null),
            "linewidth_hz": widths,
            "linewidth_model": width_model(delta, voigt),
        })
        overlay = pd.DataFrame({
            "detuning_hz": dense,
            "area_model": area_model(dense, area_fit.full),
            "area_null": area_model(dense, area_fit.null),
            "linewidth_model": width_model(dense, voigt),
        })
        if "voigt_detuning_no_jitter" in fits:
            overlay["linewidth_no_jitter"] = width_model(dense, fits["voigt_detuning_no_jitter"])
        return self._bundle(options, {
            "detuning_residuals": frame_to_csv(residuals),
            "detuning_overlay": frame_to_csv(overlay),
        }, fits, warnings=warnings)

    def _fit_g0(self, options: FitOptions, frame: pd.DataFrame) -> ReportBundle:
        points = cooling_points(frame)
        methods = ["linewidth", "cooperativity"] if options.g0_method == "both" else [options.g0_method]
        fits: Dict[str, FitResult] = {}
        failures = []
        tables: Dict[str, str] = {}
        per_photon = backaction_rate(options.device, options.device.omega_m, 1.0)
        for method in methods:
            try:
                result = fit_g0_from_linewidths(points, options.device, method=method)
            except FittingError as e:
                failures.append({"input": method, "error": str(e)})
                continue
            fits[f"g0_{method}"] = result
            n_c = np.unique(frame["n_c"].to_numpy(dtype=float))
            slope = result.value("slope")
            tables[f"g0_{method}_overlay"] = frame_to_csv(pd.DataFrame({
                "n_c": n_c, "gamma_om_model_hz": slope * n_c,
                "gamma_om_device_hz": per_photon * n_c,
            }))
        if not fits and failures:
            raise FittingError("; ".join(f["error"] for f in failures))
        return self._bundle(options, tables, fits, failures=failures)

    def _fit_bath(self, options: FitOptions, frame: pd.DataFrame) -> ReportBundle:
        points = cooling_points(frame)
        datasets = [[p for p in points if p.T_f == T_f] for T_f in sorted({p.T_f for p in points})]
        fit = fit_bath_model(
            datasets, options.device, options.np_amplitude, options.np_exponent,
            mode=options.bath_mode, n_starts=options.n_starts,
        )
        tables = {
            "bath_model_knots": frame_to_csv(pd.DataFrame({
                "n_c": fit.knots_n_c, "gamma_p_hz": fit.gamma_p, "gamma_p_err": fit.gamma_p_err,
                "t_p_k": fit.knot_temperatures(),
            })),
        }
        tables.update(self._bath_predictions(options, fit, points))
        fits = {"bath_model": fit.result.model_copy(update={
            "parameters": {**fit.result.parameters, "gamma_0": fit.gamma_0},
            "uncertainties": {**fit.result.uncertainties, "gamma_0": fit.gamma_0_err},
        })}
        return self._bundle(options, tables, fits)

    def _bath_predictions(self, options: FitOptions, fit: BathModelFit,
                          points: List[CoolingCurvePoint]) -> Dict[str, str]:
        """Model occupancies at the data and ξ(n_c) predicted by the fitted baths"""
        dev = options.device
        residual_rows, asymmetry_rows = [], []
        for p in points:
            bath = fit.to_bath_model(p.T_f)
            probe = ProbeState(detuning=int(p.detuning_sign) * dev.omega_m, n_c=p.n_c)
            try:
                model = mode_occupancy(dev, probe, bath)
            except PhysicsError:
                model = float("nan")
            residual_rows.append({
                "t_f_k": p.T_f, "n_c": p.n_c, "detuning_sign": int(p.detuning_sign),
                "occupancy": p.occupancy, "occupancy_err": p.occupancy_err,
                "occupancy_model": model, "residual": p.occupancy - model,
            })
        for T_f in sorted({p.T_f for p in points}):
            bath = fit.to_bath_model(T_f)
            for n_c in np.geomspace(min(fit.knots_n_c), max(fit.knots_n_c), 60):
                try:
                    xi = sideband_asymmetry(dev, float(n_c), bath)
                except PhysicsError:
                    continue
                asymmetry_rows.append({"t_f_k": T_f, "n_c": float(n_c), "xi_model": xi})
        return {
            "bath_model_residuals": frame_to_csv(pd.DataFrame(residual_rows)),
            "bath_model_asymmetry": frame_to_csv(pd.DataFrame(asymmetry_rows, columns=["t_f_k", "n_c", "xi_model"])),
        }

    @staticmethod
    def _optional_errors(frame: pd.DataFrame, column: str) -> Optional[np.ndarray]:
        if column not in frame.columns:
            return None
        errors = frame[column].to_numpy(dtype=float)
        return errors if np.all(errors > 0) and np.all(np.isfinite(errors)) else None

    def _bundle(self, options: FitOptions, tables: Dict[str, str], fits: Dict[str, FitResult],
                warnings: Optional[List[str]] = None, failures: Optional[List[Dict[str, Any]]] = None) -> ReportBundle:
        payload = options.model_dump(mode="json")
        all_warnings = list(warnings or [])
        for name, result in fits.items():
            all_warnings.extend(f"{name}: {w}" for w in result.warnings if f"{name}: {w}" not in all_warnings)
        return ReportBundle(
            tables=tables,
            fits=fits,
            provenance=provenance(f"fit:{options.mode.value}", payload),
            config=payload,
            warnings=all_warnings,
            failures=list(failures or []),
        )
