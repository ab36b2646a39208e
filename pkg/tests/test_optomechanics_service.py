import math

import numpy as np
import pytest

from models.device_models import BathModel, JitterLaw, ProbeState, TabulatedGammaP, _log_log_pchip
from services.optomechanics_service import (
    DomainError, InstabilityError, absorption_bath, backaction_rate, backaction_shape, bose_einstein,
    cavity_reflection, cooperativity, energy_damping, gamma_om, input_power_for_photons, intracavity_photons,
    inverse_bose_einstein, jitter_width, mechanical_q, mode_occupancy, self_oscillation_threshold,
    sideband_asymmetry, transduction_envelope, transduction_rate,
)


def test_backaction_rate_per_photon(dev):
    rate = gamma_om(dev, ProbeState.red(dev, 1.0))
    assert rate == pytest.approx(4.08e3, rel=0.02)
    # sideband-resolved limit 4g0²/κ
    assert rate == pytest.approx(4 * dev.g0 ** 2 / dev.kappa, rel=2e-3)


def test_backaction_rate_is_odd_in_detuning_and_linear_in_photons(dev):
    delta = np.linspace(-2 * dev.omega_m, 2 * dev.omega_m, 41)
    np.testing.assert_allclose(backaction_rate(dev, delta, 1.0), -backaction_rate(dev, -delta, 1.0), rtol=1e-12)
    assert backaction_rate(dev, dev.omega_m, 3.0) == pytest.approx(3.0 * backaction_rate(dev, dev.omega_m, 1.0))
    assert backaction_rate(dev, 0.0, 5.0) == pytest.approx(0.0, abs=1e-9)


def test_backaction_shape_peaks_at_mechanical_frequency(dev):
    delta = np.linspace(dev.omega_m - dev.kappa, dev.omega_m + dev.kappa, 21)
    shape = backaction_shape(dev, delta)
    assert shape[10] == pytest.approx(1.0)
    assert np.all(shape <= 1.0 + 1e-12)


@pytest.mark.parametrize("gamma_i, expected, tolerance", [(6.1e3, 1.5, 0.10), (408.0, 0.1, 0.20)])
def test_self_oscillation_threshold(dev, gamma_i, expected, tolerance):
    assert self_oscillation_threshold(dev, gamma_i) == pytest.approx(expected, rel=tolerance)


def test_cooperativity_at_threshold_is_one(dev):
    gamma_i = 2300.0
    n_thr = self_oscillation_threshold(dev, gamma_i)
    assert cooperativity(dev, n_thr, gamma_i) == pytest.approx(1.0, rel=1e-9)
    with pytest.raises(DomainError):
        cooperativity(dev, 1.0, 0.0)


def test_bose_einstein_values():
    assert bose_einstein(3.6e9, 4.0) == pytest.approx(22.66, abs=0.05)
    assert bose_einstein(3.6e9, 0.0) == 0.0
    assert bose_einstein(3.6e9, 1e-6) == 0.0
    assert 0.235 <= inverse_bose_einstein(3.6e9, 0.98) <= 0.275


def test_bose_einstein_inverse_agrees():
    for T in (0.01, 0.27, 4.0, 300.0):
        assert inverse_bose_einstein(3.6e9, bose_einstein(3.6e9, T)) == pytest.approx(T, rel=1e-9)


@pytest.mark.parametrize("f, T", [(0.0, 1.0), (-1e9, 1.0), (1e9, -0.1)])
def test_bose_einstein_domain(f, T):
    with pytest.raises(DomainError):
        bose_einstein(f, T)


def test_inverse_bose_einstein_rejects_zero_occupancy():
    with pytest.raises(ValueError):
        inverse_bose_einstein(3.6e9, 0.0)


def test_mechanical_q(dev):
    assert mechanical_q(dev, 400.0) == pytest.approx(9.0e6, rel=0.01)


def test_low_temperature_bath_state(dev, bath):
    """Resonant-heating bath at n_c = 0.021: γ_p near 94 Hz, ⟨n⟩ near 0.98, γ_i near 400 Hz"""
    probe = ProbeState.red(dev, 0.021)
    state = absorption_bath(probe, bath, dev.omega_m)
    assert state.gamma_p == pytest.approx(94.0, rel=0.03)
    assert gamma_om(dev, probe) == pytest.approx(86.0, rel=0.02)
    assert bath.gamma_0 + state.gamma_p == pytest.approx(400.0, rel=0.02)
    assert mode_occupancy(dev, probe, bath) == pytest.approx(0.98, abs=0.02)
    assert state.T_p == pytest.approx(inverse_bose_einstein(dev.omega_m, state.n_p))


def test_occupancy_without_light_is_thermal(dev, bath):
    warm = bath.with_fridge(4.0)
    probe = ProbeState(detuning=dev.omega_m, n_c=0.0)
    assert mode_occupancy(dev, probe, warm) == pytest.approx(bose_einstein(dev.omega_m, 4.0))


def test_thermal_sideband_cooling(dev):
    bath = BathModel.thermal(gamma_0=400.0, T_f=4.0)
    n_f = bose_einstein(dev.omega_m, 4.0)
    probe = ProbeState.red(dev, 0.5)
    expected = 400.0 * n_f / (400.0 + gamma_om(dev, probe))
    assert mode_occupancy(dev, probe, bath) == pytest.approx(expected)
    assert energy_damping(dev, probe, bath) == pytest.approx(400.0 + gamma_om(dev, probe))


def test_blue_detuning_past_threshold_is_unstable(dev, bath):
    with pytest.raises(InstabilityError):
        mode_occupancy(dev, ProbeState.blue(dev, 1.0), bath)


def test_sideband_asymmetry_of_thermal_bath(dev):
    bath = BathModel.thermal(gamma_0=2000.0, T_f=0.1)
    n_c = 0.1
    n_f = bose_einstein(dev.omega_m, 0.1)
    g_om = gamma_om(dev, ProbeState.red(dev, n_c))
    n_red = 2000.0 * n_f / (2000.0 + g_om)
    n_blue = 2000.0 * n_f / (2000.0 - g_om)
    assert sideband_asymmetry(dev, n_c, bath) == pytest.approx((n_blue + 1.0) / n_red - 1.0)


def test_asymmetry_follows_the_two_sideband_occupancies(dev, bath):
    for n_c in (0.01, 0.1):
        n_red = mode_occupancy(dev, ProbeState.red(dev, n_c), bath)
        n_blue = mode_occupancy(dev, ProbeState.blue(dev, n_c), bath)
        assert sideband_asymmetry(dev, n_c, bath) == pytest.approx((n_blue + 1.0) / n_red - 1.0)
        assert sideband_asymmetry(dev, n_c, bath) > 0


def test_jitter_width_laws(dev, bath):
    probe = ProbeState.red(dev, 4.0)
    by_photons = bath.model_copy(update={"jitter_law": JitterLaw(amplitude=1000.0, exponent=-0.23, variable="n_c")})
    assert jitter_width(probe, by_photons, dev.omega_m) == pytest.approx(1000.0 * 4.0 ** -0.23)

    by_temperature = bath.model_copy(update={"jitter_law": JitterLaw(amplitude=1000.0, exponent=-0.9)})
    T_p = absorption_bath(probe, bath, dev.omega_m).T_p
    assert jitter_width(probe, by_temperature, dev.omega_m) == pytest.approx(1000.0 * T_p ** -0.9)
    assert jitter_width(probe, bath, dev.omega_m) == 0.0


def test_transduction_is_equal_on_both_sidebands(dev):
    red = transduction_rate(dev, ProbeState.red(dev, 2.0))
    blue = transduction_rate(dev, ProbeState.blue(dev, 2.0))
    assert red == pytest.approx(blue)
    assert red == pytest.approx(dev.kappa_e / dev.kappa * 4 * dev.g0 ** 2 * 2.0 / dev.kappa)
    assert transduction_envelope(dev, dev.omega_m) == pytest.approx(1.0)
    assert transduction_envelope(dev, dev.omega_m + dev.kappa / 2) == pytest.approx(0.5)


def test_cavity_reflection_dip(dev):
    on_resonance = cavity_reflection(dev, 0.0)
    assert on_resonance == pytest.approx((1.0 - 2 * dev.kappa_e / dev.kappa) ** 2)
    assert cavity_reflection(dev, 100 * dev.kappa) == pytest.approx(1.0, abs=1e-3)


def test_input_power_inverts_intracavity_photons(dev):
    P_in = input_power_for_photons(dev, dev.omega_m, 2.0)
    assert P_in > 0
    assert intracavity_photons(dev, dev.omega_m, P_in) == pytest.approx(2.0, rel=1e-12)
    with pytest.raises(DomainError):
        intracavity_photons(dev, 0.0, -1.0)


def test_device_budget_validation(dev):
    with pytest.raises(ValueError):
        dev.model_validate({**dev.model_dump(), "kappa_i": 100e6})
    assert dev.sideband_resolved
    assert math.isclose(dev.kappa, dev.kappa_e + dev.kappa_i)


@pytest.mark.parametrize("T_f", [0.010, 0.635, 4.0])
def test_occupancy_never_exceeds_the_hotter_bath(dev, bath, T_f):
    warm = bath.with_fridge(T_f)
    n_f = bose_einstein(dev.omega_m, T_f)
    for n_c in np.geomspace(1e-3, 100.0, 25):
        n_p = warm.n_p(n_c)
        for drive in (ProbeState.red(dev, n_c), ProbeState.resonant(n_c)):
            assert mode_occupancy(dev, drive, warm) <= max(n_f, n_p) * (1.0 + 1e-12)


def test_red_cooling_of_fridge_only_bath_is_monotone(dev):
    bath = BathModel.thermal(gamma_0=306.0, T_f=0.635)
    n_f = bose_einstein(dev.omega_m, 0.635)
    n_c = np.geomspace(1e-3, 100.0, 40)
    occupancy = np.array([mode_occupancy(dev, ProbeState.red(dev, n), bath) for n in n_c])
    assert np.all(np.diff(occupancy) < 0)
    expected = [n_f / (1.0 + cooperativity(dev, n, 306.0)) for n in n_c]
    np.testing.assert_allclose(occupancy, expected, rtol=1e-12)


def test_reflection_minimum_sits_on_resonance(dev):
    delta = np.linspace(-5 * dev.kappa, 5 * dev.kappa, 2001)
    reflectance = cavity_reflection(dev, delta)
    assert np.argmin(reflectance) == 1000
    assert reflectance.min() == pytest.approx(cavity_reflection(dev, 0.0))
    assert intracavity_photons(dev, 0.0, 1e-6) / intracavity_photons(dev, dev.kappa / 2, 1e-6) == pytest.approx(2.0)


@pytest.mark.parametrize("T_f", [0.1, 0.635])
def test_weak_drive_asymmetry_is_inverse_occupancy(dev, bath, T_f):
    warm = bath.with_fridge(T_f)
    n_red = mode_occupancy(dev, ProbeState.red(dev, 1e-6), warm)
    assert sideband_asymmetry(dev, 1e-6, warm) == pytest.approx(1.0 / n_red, rel=1e-3)


def test_bose_einstein_round_trip_over_twelve_decades():
    for n in np.geomspace(1e-6, 1e6, 61):
        assert bose_einstein(3.6e9, inverse_bose_einstein(3.6e9, n)) == pytest.approx(n, rel=1e-10)


def test_tabulated_gamma_p_builds_its_interpolator_once():
    law = TabulatedGammaP(T_p=[0.5, 1.0, 2.0, 4.0], gamma=[10.0, 80.0, 300.0, 900.0])
    _log_log_pchip.cache_clear()
    values = [law(T) for T in np.geomspace(0.1, 10.0, 200)]
    assert _log_log_pchip.cache_info().misses == 1
    assert law(1.0) == pytest.approx(80.0)
    assert law(0.1) == pytest.approx(10.0)
    assert law(10.0) == pytest.approx(900.0)
    assert np.all(np.diff(values) >= 0)
    assert law == TabulatedGammaP(T_p=[0.5, 1.0, 2.0, 4.0], gamma=[10.0, 80.0, 300.0, 900.0])
