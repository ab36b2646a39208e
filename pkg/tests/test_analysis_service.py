import numpy as np
import pandas as pd
import pytest

from database.report_store import ReportStore, TableParseError, csv_to_frame, frame_to_csv
from models.config_models import FitOptions, NoiseSpec, RunConfig, SpectrumGrid, SweepSpec
from models.device_models import DeviceParams, ProbeState
from models.spectrum_models import Spectrum, SpectrumMetadata
from services.analysis_service import AnalysisService, cooling_points
from services.fitting_service import FittingError
from services.optomechanics_service import (
    backaction_shape, bose_einstein, energy_damping, gamma_om, mode_occupancy, transduction_envelope,
)
from services.simulation_service import COOLING_COLUMNS, SimulationService
from services.spectra_service import voigt_fwhm
from utils.enums import DetuningSign, FitMode


def _cooling_frame(dev, T_f=0.5, n_c_values=(0.01, 0.04, 0.07, 0.1), gamma_0=1000.0, signs=(1, -1)):
    rows = []
    n_f = bose_einstein(dev.omega_m, T_f)
    for n_c in n_c_values:
        for sign in signs:
            g_om = gamma_om(dev, ProbeState(detuning=sign * dev.omega_m, n_c=n_c))
            rows.append({
                "t_f_k": T_f, "n_c": n_c, "detuning_sign": sign,
                "occupancy": gamma_0 * n_f / (gamma_0 + g_om), "occupancy_err": 0.0,
                "linewidth_hz": gamma_0 + g_om, "linewidth_err": 0.0,
            })
    return pd.DataFrame(rows, columns=COOLING_COLUMNS)


def test_power_law_table_fit(tmp_path):
    x = np.geomspace(0.01, 10.0, 20)
    path = tmp_path / "jitter.csv"
    path.write_text(frame_to_csv(pd.DataFrame({"n_c": x, "gamma_g": 6100.0 * x ** -0.23})))
    options = FitOptions(mode=FitMode.POWER_LAW, inputs=[str(path)], x_column="n_c", y_column="gamma_g")
    bundle = AnalysisService(ReportStore(tmp_path)).cmd_fit(options)
    fit = bundle.fits["power_law"]
    assert fit.value("exponent") == pytest.approx(-0.23, abs=1e-9)
    assert fit.value("amplitude") == pytest.approx(6100.0, rel=1e-9)
    assert {"power_law_residuals", "power_law_overlay"} <= set(bundle.tables)
    assert bundle.provenance.command == "fit:power-law"


def test_missing_input_table_is_a_parse_error(tmp_path):
    with pytest.raises(TableParseError):
        AnalysisService(ReportStore(tmp_path)).cmd_fit(FitOptions(mode=FitMode.G0))


def test_g0_fit_by_both_methods(dev):
    options = FitOptions(mode=FitMode.G0, inputs=["cooling_curves.csv"], g0_method="both")
    bundle = AnalysisService().fit_series(options, _cooling_frame(dev))
    assert bundle.fits["g0_linewidth"].value("g0") == pytest.approx(735e3, rel=1e-6)
    assert bundle.fits["g0_cooperativity"].value("g0") == pytest.approx(735e3, rel=1e-6)
    overlay = csv_to_frame(bundle.tables["g0_linewidth_overlay"])
    np.testing.assert_allclose(overlay["gamma_om_model_hz"], overlay["gamma_om_device_hz"], rtol=1e-6)


def test_g0_failure_is_recorded(dev):
    options = FitOptions(mode=FitMode.G0, inputs=["red.csv"], g0_method="linewidth")
    bundle = AnalysisService().fit_series(options, _cooling_frame(dev, signs=(1,)))
    assert bundle.fits == {}
    assert len(bundle.failures) == 1
    assert "both sidebands" in bundle.failures[0]["error"]


def test_spectrum_modes_do_not_take_series(dev):
    with pytest.raises(FittingError):
        AnalysisService().fit_series(FitOptions(mode=FitMode.LORENTZIAN), _cooling_frame(dev))


def test_cooling_rows_with_missing_values_are_skipped(dev):
    frame = _cooling_frame(dev)
    frame.loc[1, "occupancy"] = np.nan
    frame.loc[2, "n_c"] = 0.0
    points = cooling_points(frame)
    assert len(points) == len(frame) - 2
    assert points[0].detuning_sign == DetuningSign.RED


def test_detuning_series_fit(dev):
    C, gamma_i, gamma_G = 3.9, 2300.0, 6100.0
    n_c = C * gamma_i / gamma_om(dev, ProbeState.red(dev, 1.0))
    delta = np.linspace(dev.omega_m - dev.kappa, dev.omega_m + dev.kappa, 21)
    shape = backaction_shape(dev, delta)
    frame = pd.DataFrame({
        "detuning_hz": delta[::-1],
        "n_c": n_c,
        "area_w": (2e-12 * transduction_envelope(dev, delta) / (1.0 + C * shape))[::-1],
        "linewidth_hz": voigt_fwhm(gamma_i * (1.0 + C * shape), gamma_G)[::-1],
    })
    options = FitOptions(mode=FitMode.DETUNING, inputs=["detuning_series.csv"])
    bundle = AnalysisService().fit_series(options, frame)
    assert bundle.fits["area_vs_detuning"].value("cooperativity") == pytest.approx(C, rel=1e-3)
    assert bundle.fits["voigt_detuning"].value("gamma_i") == pytest.approx(gamma_i, rel=1e-2)
    assert bundle.fits["voigt_detuning"].value("g0") == pytest.approx(dev.g0, rel=1e-2)
    assert "voigt_detuning_no_jitter" in bundle.fits
    overlay = csv_to_frame(bundle.tables["detuning_overlay"])
    assert list(overlay.columns) == [
        "detuning_hz", "area_model", "area_null", "linewidth_model", "linewidth_no_jitter",
    ]
    residuals = csv_to_frame(bundle.tables["detuning_residuals"])
    assert np.all(np.diff(residuals["detuning_hz"]) > 0)


@pytest.mark.slow
def test_detuning_series_from_noisy_heterodyne_spectra(jitter_bath):
    dev = DeviceParams.reference_device(g0=715e3)
    C, gamma_i = 3.9, 2300.0
    n_c = C * gamma_i / gamma_om(dev, ProbeState.red(dev, 1.0))
    config = RunConfig(
        device=dev,
        bath=jitter_bath.with_fridge(4.0),
        sweep=SweepSpec(variable="detuning", scale="linear", start=dev.omega_m - dev.kappa,
                        stop=dev.omega_m + dev.kappa, points=21),
        noise=NoiseSpec(seed=3, n_avg=1e5),
        spectrum=SpectrumGrid(points=1024),
        n_c=n_c,
    )
    simulated = SimulationService().cmd_simulate(config)
    assert simulated.failures == []
    series = csv_to_frame(simulated.tables["detuning_series"])
    assert len(series) == 21

    options = FitOptions(mode=FitMode.DETUNING, inputs=["detuning_series.csv"], device=dev)
    bundle = AnalysisService().fit_series(options, series)
    assert bundle.failures == []
    assert bundle.fits["area_vs_detuning"].value("cooperativity") == pytest.approx(C, rel=0.05)
    voigt = bundle.fits["voigt_detuning"]
    assert voigt.value("gamma_i") == pytest.approx(gamma_i, rel=0.08)
    assert voigt.value("gamma_G") == pytest.approx(6100.0, rel=0.08)
    assert voigt.value("g0") == pytest.approx(715e3, rel=0.05)
    assert not any("null model" in w for w in bundle.warnings)


def test_lorentzian_fits_of_simulated_spectra(tmp_path):
    config = RunConfig.model_validate({
        "sweep": {"variable": "n_c", "scale": "log", "start": 0.01, "stop": 0.1, "points": 3},
        "spectrum": {"points": 256},
        "detunings": [1],
    })
    store = ReportStore(tmp_path)
    truth = csv_to_frame(SimulationService(store).cmd_simulate(config).tables["sweep"])
    flat = Spectrum.from_grid(np.arange(32.0), np.ones(32), SpectrumMetadata(detuning=0.0, n_c=0.0, T_f=0.0))
    store.write_spectrum(flat, "spectra/flat.csv")

    options = FitOptions(mode=FitMode.LORENTZIAN, inputs=[str(tmp_path)], workers=2)
    bundle = AnalysisService(store).cmd_fit(options)
    summary = csv_to_frame(bundle.tables["lineshapes"])
    assert list(summary["input"]) == ["point_0000", "point_0001", "point_0002"]
    np.testing.assert_allclose(summary["occupancy"], truth["occupancy"], rtol=1e-3)
    assert [f["input"] for f in bundle.failures] == ["flat"]
    assert "point_0001_overlay" in bundle.tables


def _bath_frame(dev, bath, n_c_values):
    rows = []
    for T_f in (0.010, 0.635):
        warm = bath.with_fridge(T_f)
        for n_c in n_c_values:
            probe = ProbeState.red(dev, n_c)
            occupancy = mode_occupancy(dev, probe, warm)
            rows.append({
                "t_f_k": T_f, "n_c": n_c, "detuning_sign": 1, "occupancy": occupancy,
                "occupancy_err": 0.01 * occupancy, "linewidth_hz": energy_damping(dev, probe, warm),
                "linewidth_err": 1.0,
            })
    return pd.DataFrame(rows, columns=COOLING_COLUMNS)


@pytest.mark.slow
def test_bath_model_fit_tables(dev, bath):
    options = FitOptions(mode=FitMode.BATH_MODEL, inputs=["cooling_curves.csv"])
    bundle = AnalysisService().fit_series(options, _bath_frame(dev, bath, np.geomspace(0.01, 1.0, 9)))
    fit = bundle.fits["bath_model"]
    assert fit.value("gamma_0") == pytest.approx(306.0, rel=0.1)
    knots = csv_to_frame(bundle.tables["bath_model_knots"])
    assert list(knots.columns) == ["n_c", "gamma_p_hz", "gamma_p_err", "t_p_k"]
    assert np.all(np.diff(knots["t_p_k"]) > 0)
    asymmetry = csv_to_frame(bundle.tables["bath_model_asymmetry"])
    assert sorted(asymmetry["t_f_k"].unique()) == [0.010, 0.635]
    assert list(asymmetry.columns) == ["t_f_k", "n_c", "xi_model"]
