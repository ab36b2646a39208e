import io
import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from database.report_store import ReportStore, csv_to_frame, frame_to_csv  # noqa: E402
from models.config_models import ReportBundle  # noqa: E402
from utils.enums import DetuningSign, Figure  # noqa: E402

logger = logging.getLogger(__name__)

PLOTDATA_DIR = "plotdata"

# Column schema of every curve a figure emits, x column first
CURVE_COLUMNS: Dict[str, List[str]] = {
    "linewidth": ["n_c", "linewidth_hz", "linewidth_err"],
    "gamma_om_model": ["n_c", "gamma_om_model_hz"],
    "occupancy": ["n_c", "occupancy", "occupancy_err"],
    "occupancy_model": ["n_c", "occupancy", "t_p_k"],
    "area": ["detuning_hz", "area_w", "area_err"],
    "area_model": ["detuning_hz", "area_model", "area_null"],
    "detuning_linewidth": ["detuning_hz", "linewidth_hz", "linewidth_err"],
    "detuning_linewidth_model": ["detuning_hz", "linewidth_model"],
    "gamma_i": ["n_c", "gamma_i_hz", "gamma_i_err", "t_p_k"],
    "xi": ["n_c", "xi_measured", "xi_err"],
    "xi_model": ["n_c", "xi_model"],
    "gamma_p": ["t_p_k", "gamma_p_hz"],
    "gamma_p_low_t": ["t_p_k", "gamma_p_low_t_hz"],
    "gamma_p_high_t": ["t_p_k", "gamma_p_high_t_hz"],
}

# Table each figure needs and the command that produces it
REQUIRED_TABLES: Dict[Figure, Dict[str, str]] = {
    Figure.FIG2A: {"cooling_curves": "simulate with red and blue detunings"},
    Figure.FIG2B: {"cooling_curves": "simulate with red and blue detunings"},
    Figure.FIG3B: {"detuning_series": "simulate with a detuning sweep"},
    Figure.FIG3C: {"detuning_series": "simulate with a detuning sweep"},
    Figure.FIG4A: {"cooling_curves": "simulate with an n_c sweep", "sweep": "simulate with an n_c sweep"},
    Figure.FIG4B: {"bath_model_knots": "fit --mode bath-model"},
    Figure.FIG4E: {"asymmetry": "simulate with red and blue detunings"},
    Figure.FIGS5B: {"phonon": "phonon"},
}


class PlotDataError(Exception):
    """Custom exception for figure-series export operations"""
    pass


class MissingSeriesError(PlotDataError, KeyError):
    """The bundle lacks a table a figure is built from"""

    def __init__(self, figure: Figure, table: str, step: str):
        self.figure = figure
        self.table = table
        self.step = step
        super().__init__(f"{figure.value} needs the '{table}' table; run omckit {step} first")

    def __str__(self) -> str:
        return self.args[0]


def _temperature_label(T_f: float) -> str:
    return f"{T_f * 1e3:g}mK"


class PlotDataService:
    """Turns report bundles into one CSV per plotted curve, plus an optional SVG"""

    def __init__(self, store: Optional[ReportStore] = None):
        self.store = store

    def _table(self, bundle: ReportBundle, figure: Figure, name: str) -> pd.DataFrame:
        if not bundle.has_table(name):
            raise MissingSeriesError(figure, name, REQUIRED_TABLES[figure].get(name, "simulate"))
        frame = csv_to_frame(bundle.tables[name], source=f"{name}.csv")
        if frame.empty:
            raise MissingSeriesError(figure, name, REQUIRED_TABLES[figure].get(name, "simulate"))
        return frame

    @staticmethod
    def _curve(frame: pd.DataFrame, schema: str) -> pd.DataFrame:
        return frame[CURVE_COLUMNS[schema]].reset_index(drop=True)

    # Figures
    def _fig2a(self, bundle: ReportBundle) -> Dict[str, pd.DataFrame]:
        cooling = self._table(bundle, Figure.FIG2A, "cooling_curves")
        curves = {}
        for sign in (DetuningSign.RED, DetuningSign.BLUE):
            side = cooling[cooling["detuning_sign"] == int(sign)].sort_values("n_c", kind="mergesort")
            if not side.empty:
                curves[f"fig2a_{sign.name.lower()}"] = self._curve(side, "linewidth")
        overlay = "g0_linewidth_overlay"
        if bundle.has_table(overlay):
            curves["fig2a_model"] = self._curve(csv_to_frame(bundle.tables[overlay]), "gamma_om_model")
        return curves

    def _fig2b(self, bundle: ReportBundle) -> Dict[str, pd.DataFrame]:
        cooling = self._table(bundle, Figure.FIG2B, "cooling_curves")
        curves = {}
        for sign in (DetuningSign.RED, DetuningSign.BLUE):
            side = cooling[cooling["detuning_sign"] == int(sign)].sort_values("n_c", kind="mergesort")
            if not side.empty:
                curves[f"fig2b_{sign.name.lower()}"] = self._curve(side, "occupancy")
        return curves

    def _fig3b(self, bundle: ReportBundle) -> Dict[str, pd.DataFrame]:
        series = self._table(bundle, Figure.FIG3B, "detuning_series")
        curves = {"fig3b_data": self._curve(series, "area")}
        if bundle.has_table("detuning_overlay"):
            curves["fig3b_model"] = self._curve(csv_to_frame(bundle.tables["detuning_overlay"]), "area_model")
        return curves

    def _fig3c(self, bundle: ReportBundle) -> Dict[str, pd.DataFrame]:
        series = self._table(bundle, Figure.FIG3C, "detuning_series")
        curves = {"fig3c_data": self._curve(series, "detuning_linewidth")}
        if bundle.has_table("detuning_overlay"):
            overlay = csv_to_frame(bundle.tables["detuning_overlay"])
            curves["fig3c_model"] = self._curve(overlay, "detuning_linewidth_model")
        return curves

    def _fig4a(self, bundle: ReportBundle) -> Dict[str, pd.DataFrame]:
        cooling = self._table(bundle, Figure.FIG4A, "cooling_curves")
        sweep = self._table(bundle, Figure.FIG4A, "sweep")
        curves = {}
        for T_f in sorted(cooling["t_f_k"].unique()):
            label = _temperature_label(T_f)
            data = cooling[(cooling["t_f_k"] == T_f) & (cooling["detuning_sign"] == int(DetuningSign.RED))]
            model = sweep[(sweep["t_f_k"] == T_f) & (sweep["detuning_sign"] == int(DetuningSign.RED))
                          & sweep["occupancy"].notna()]
            if not data.empty:
                curves[f"fig4a_data_{label}"] = self._curve(data.sort_values("n_c", kind="mergesort"), "occupancy")
            if not model.empty:
                curves[f"fig4a_model_{label}"] = self._curve(
                    model.sort_values("n_c", kind="mergesort"), "occupancy_model",
                )
        return curves

    def _fig4b(self, bundle: ReportBundle) -> Dict[str, pd.DataFrame]:
        knots = self._table(bundle, Figure.FIG4B, "bath_model_knots")
        fit = bundle.fits.get("bath_model")
        if fit is None:
            raise MissingSeriesError(Figure.FIG4B, "bath_model fit", REQUIRED_TABLES[Figure.FIG4B]["bath_model_knots"])
        gamma_0, gamma_0_err = fit.value("gamma_0"), fit.error("gamma_0")
        frame = knots.assign(
            gamma_i_hz=gamma_0 + knots["gamma_p_hz"],
            gamma_i_err=(knots["gamma_p_err"] ** 2 + gamma_0_err ** 2) ** 0.5,
        )
        return {"fig4b_gamma_i": self._curve(frame, "gamma_i")}

    def _fig4e(self, bundle: ReportBundle) -> Dict[str, pd.DataFrame]:
        asymmetry = self._table(bundle, Figure.FIG4E, "asymmetry")
        curves = {}
        for T_f in sorted(asymmetry["t_f_k"].unique()):
            label = _temperature_label(T_f)
            rows = asymmetry[asymmetry["t_f_k"] == T_f].sort_values("n_c", kind="mergesort")
            curves[f"fig4e_data_{label}"] = self._curve(rows, "xi")
            curves[f"fig4e_model_{label}"] = self._curve(rows, "xi_model")
        return curves

    def _figs5b(self, bundle: ReportBundle) -> Dict[str, pd.DataFrame]:
        phonon = self._table(bundle, Figure.FIGS5B, "phonon")
        curves = {"figS5b_exact": self._curve(phonon, "gamma_p")}
        if phonon["gamma_p_low_t_hz"].notna().any():
            curves["figS5b_low_t"] = self._curve(phonon, "gamma_p_low_t")
            curves["figS5b_high_t"] = self._curve(phonon, "gamma_p_high_t")
        return curves

    def series(self, bundle: ReportBundle, figure: Figure) -> Dict[str, pd.DataFrame]:
        """Curves of one figure, keyed by output file stem"""
        builders: Dict[Figure, Callable[[ReportBundle], Dict[str, pd.DataFrame]]] = {
            Figure.FIG2A: self._fig2a,
            Figure.FIG2B: self._fig2b,
            Figure.FIG3B: self._fig3b,
            Figure.FIG3C: self._fig3c,
            Figure.FIG4A: self._fig4a,
            Figure.FIG4B: self._fig4b,
            Figure.FIG4E: self._fig4e,
            Figure.FIGS5B: self._figs5b,
        }
        curves = builders[figure](bundle)
        if not curves:
            table = next(iter(REQUIRED_TABLES[figure]))
            raise MissingSeriesError(figure, table, REQUIRED_TABLES[figure][table])
        return curves

    def render_svg(self, figure: Figure, curves: Dict[str, pd.DataFrame]) -> str:
        """Minimal line plot of every curve: first column against second"""
        fig, ax = plt.subplots(figsize=(6, 4))
        try:
            for name, frame in curves.items():
                x, y = frame.columns[0], frame.columns[1]
                ax.plot(frame[x], frame[y], marker="o" if "data" in name or "_red" in name or "_blue" in name else None,
                        linestyle="-", label=name)
            first = next(iter(curves.values()))
            ax.set_xlabel(first.columns[0])
            ax.set_ylabel(first.columns[1])
            if first.columns[0] in ("n_c", "t_p_k"):
                ax.set_xscale("log")
            ax.set_title(figure.value)
            ax.legend(fontsize="small")
            buffer = io.StringIO()
            fig.savefig(buffer, format="svg")
            return buffer.getvalue()
        finally:
            plt.close(fig)

    def cmd_plotdata(self, bundle: ReportBundle, figure: Figure, formats: Sequence[str] = ("csv",)) -> List[Path]:
        """Write plotdata/<figure>/<curve>.csv for each curve and optionally <figure>.svg"""
        if self.store is None:
            raise PlotDataError("plotdata needs an output store")
        curves = self.series(bundle, figure)
        self.store.ensure_writable()
        written: List[Path] = []
        if "csv" in formats:
            for name, frame in curves.items():
                written.append(self.store.write_table(f"{PLOTDATA_DIR}/{figure.value}/{name}", frame_to_csv(frame)))
        if "svg" in formats:
            written.append(self.store.write_text(f"{PLOTDATA_DIR}/{figure.value}/{figure.value}.svg",
                                                 self.render_svg(figure, curves)))
        logger.info(f"Wrote {len(written)} plot files for {figure.value}")
        return written
