import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from models.device_models import BathModel, ProbeState
from models.spectrum_models import CalibrationChain, LineshapeParams, Spectrum, SpectrumMetadata
from services.optomechanics_service import mode_occupancy, optical_frequency
from services.spectra_service import (
    CalibrationError, NegativeOccupancyError, SpectraError, add_measurement_noise, calibrate_occupancy,
    calibration_tone_psd, convert_spectrum, fiber_coupling_efficiency, gaussian_psd, heterodyne_lineshape,
    heterodyne_psd, lorentzian_psd, receiver_efficiency, shot_noise_level, sideband_area, total_efficiency,
    voigt_fwhm, voigt_psd,
)
from utils.enums import SpectrumUnit


def _grid(center=0.0, half_span=2e5, points=20001):
    return np.linspace(center - half_span, center + half_span, points)


def test_lorentzian_area_is_occupancy():
    f = _grid()
    assert trapezoid(lorentzian_psd(2.5, 400.0, 0.0, f), f) == pytest.approx(2.5, rel=2e-3)
    assert lorentzian_psd(1.0, 400.0, 0.0, 0.0) == pytest.approx(1.0 / (math.pi * 200.0))
    with pytest.raises(SpectraError):
        lorentzian_psd(1.0, 0.0, 0.0, f)


def test_voigt_reduces_to_its_limits():
    f = _grid(half_span=5e4, points=2001)
    pure_lorentzian = voigt_psd(LineshapeParams(center=0.0, gamma_L=400.0, gamma_G=0.0, area=3.0), f)
    np.testing.assert_allclose(pure_lorentzian, lorentzian_psd(3.0, 400.0, 0.0, f), rtol=1e-10)
    pure_gaussian = voigt_psd(LineshapeParams(center=0.0, gamma_L=0.0, gamma_G=6100.0, area=3.0), f)
    np.testing.assert_allclose(pure_gaussian, gaussian_psd(3.0, 6100.0, 0.0, f), rtol=1e-10, atol=1e-300)


def test_voigt_profile_has_unit_area_and_expected_width():
    f = _grid(half_span=2e6, points=400001)
    params = LineshapeParams(center=0.0, gamma_L=2300.0, gamma_G=6100.0, area=1.0, floor=0.0)
    values = voigt_psd(params, f)
    assert trapezoid(values, f) == pytest.approx(1.0, rel=1e-3)
    half = values.max() / 2
    above = f[values >= half]
    assert above[-1] - above[0] == pytest.approx(voigt_fwhm(2300.0, 6100.0), rel=5e-3)


def test_voigt_fwhm_limits():
    assert voigt_fwhm(1000.0, 0.0) == pytest.approx(1000.0, rel=1e-3)
    assert voigt_fwhm(0.0, 1000.0) == pytest.approx(1000.0)


def test_total_efficiency_of_the_detection_chain():
    calib = CalibrationChain(eta_cpl=0.34, eta_23=0.84, eta_VC=0.8, eta_det=0.7)
    assert total_efficiency(calib) == pytest.approx(0.160, abs=1e-3)


def test_receiver_efficiency_from_calibration_tone(dev, calib):
    f_o = optical_frequency(dev)
    f = _grid(center=calib.beat_frequency, half_span=2e4, points=4001)
    tone = calibration_tone_psd(calib, 1e-12, f_o, f)
    S_noise = calib.S_dark + shot_noise_level(calib, f_o)
    assert receiver_efficiency(tone, S_noise, calib.S_dark, 1e-12, f_o) == pytest.approx(0.56, abs=1e-3)


def test_receiver_efficiency_needs_excess_floor(dev, calib):
    f_o = optical_frequency(dev)
    tone = calibration_tone_psd(calib, 1e-12, f_o, _grid(center=calib.beat_frequency, half_span=2e4, points=401))
    with pytest.raises(CalibrationError):
        receiver_efficiency(tone, calib.S_dark, calib.S_dark, 1e-12, f_o)


def test_fiber_coupling_efficiency():
    P_in = 20e-6
    eta = fiber_coupling_efficiency(0.34 ** 2 * 0.88 * 0.84 * P_in, P_in, 0.88, 0.84)
    assert eta == pytest.approx(0.34)
    with pytest.raises(CalibrationError):
        fiber_coupling_efficiency(2 * P_in, P_in, 0.88, 0.84)


def test_heterodyne_spectrum_area_matches_calibration(dev, bath, calib):
    probe = ProbeState.red(dev, 0.5)
    shape = heterodyne_lineshape(dev, probe, bath, calib)
    f = _grid(center=calib.beat_frequency, half_span=400 * shape.gamma_L, points=200001)
    spec = heterodyne_psd(dev, probe, bath, calib, f)
    assert spec.unit == SpectrumUnit.DETECTOR
    area = trapezoid(spec.psd - shape.floor, spec.frequencies)
    assert area == pytest.approx(sideband_area(dev, probe, bath, calib), rel=5e-3)
    assert calibrate_occupancy(shape.area, calib, dev, probe) == pytest.approx(mode_occupancy(dev, probe, bath))


def test_blue_sideband_carries_the_extra_quantum(dev, bath, calib):
    probe = ProbeState.blue(dev, 0.05)
    area = sideband_area(dev, probe, bath, calib)
    assert calibrate_occupancy(area, calib, dev, probe) == pytest.approx(mode_occupancy(dev, probe, bath))


def test_blue_area_below_vacuum_is_rejected(dev, calib):
    probe = ProbeState.blue(dev, 0.05)
    thermal = BathModel.thermal(gamma_0=400.0, T_f=0.0)
    area = sideband_area(dev, probe, thermal, calib)
    assert calibrate_occupancy(area, calib, dev, probe) == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(NegativeOccupancyError):
        calibrate_occupancy(0.5 * area, calib, dev, probe)


def test_beta_correction_divides_out(dev, bath):
    probe = ProbeState.red(dev, 0.5)
    biased = CalibrationChain(beta=1.3)
    area = sideband_area(dev, probe, bath, biased)
    assert calibrate_occupancy(area, biased, dev, probe) == pytest.approx(mode_occupancy(dev, probe, bath))
    assert calibrate_occupancy(area, CalibrationChain(), dev, probe) == pytest.approx(
        1.3 * mode_occupancy(dev, probe, bath)
    )


def test_measurement_noise_is_reproducible(dev, bath, calib):
    probe = ProbeState.red(dev, 0.5)
    spec = heterodyne_psd(dev, probe, bath, calib, _grid(center=calib.beat_frequency, half_span=2e4, points=512))
    first = add_measurement_noise(spec, seed=11, n_avg=1000, index=3)
    again = add_measurement_noise(spec, seed=11, n_avg=1000, index=3)
    other = add_measurement_noise(spec, seed=11, n_avg=1000, index=4)
    assert first.values == again.values
    assert first.values != other.values
    assert first.metadata.n_avg == 1000
    relative = first.psd / spec.psd - 1.0
    assert np.std(relative) == pytest.approx(1 / math.sqrt(1000), rel=0.15)


def test_spectrum_unit_conversion(dev, bath, calib):
    probe = ProbeState.red(dev, 0.5)
    spec = heterodyne_psd(dev, probe, bath, calib, _grid(center=calib.beat_frequency, half_span=2e4, points=256))
    relative = convert_spectrum(spec, calib, dev, probe, SpectrumUnit.SHOT_NOISE)
    noise = shot_noise_level(calib, optical_frequency(dev))
    np.testing.assert_allclose(relative.psd, (spec.psd - calib.S_dark) / noise, rtol=1e-12)
    back = convert_spectrum(relative, calib, dev, probe, SpectrumUnit.DETECTOR)
    np.testing.assert_allclose(back.psd, spec.psd, rtol=1e-10)
    displacement = convert_spectrum(spec, calib, dev, probe, SpectrumUnit.DISPLACEMENT)
    assert displacement.unit == SpectrumUnit.DISPLACEMENT
    assert np.all(displacement.psd > 0)


def test_spectrum_rejects_non_finite_values():
    metadata = SpectrumMetadata(detuning=0.0, n_c=0.0, T_f=0.0)
    values = np.ones(32)
    values[3] = np.nan
    with pytest.raises(ValueError):
        Spectrum.from_grid(np.arange(32.0), values, metadata)


def test_voigt_matches_brute_force_convolution():
    f = np.linspace(-1e5, 1e5, 2048)
    params = LineshapeParams(center=0.0, gamma_L=2300.0, gamma_G=6100.0, area=1.0, floor=0.0)
    central = f[np.abs(f) < 2e4][::16]
    lorentzian = lorentzian_psd(1.0, 2300.0, 0.0, f)
    convolved = np.array([trapezoid(lorentzian * gaussian_psd(1.0, 6100.0, fc, f), f) for fc in central])
    np.testing.assert_allclose(voigt_psd(params, central), convolved, rtol=1e-3)


def test_measurement_noise_averages_out_over_many_bins():
    f = np.linspace(-5e5, 5e5, 10000)
    flat = Spectrum.from_grid(f, np.ones(len(f)), SpectrumMetadata(detuning=3.6e9, n_c=1.0, T_f=0.01))
    relative = add_measurement_noise(flat, seed=5, n_avg=100).psd - 1.0
    assert abs(np.mean(relative)) < 5e-3
    assert np.std(relative) == pytest.approx(0.1, rel=0.03)
    assert add_measurement_noise(flat, seed=5, n_avg=math.inf) is flat
