import math

import numpy as np
import pytest

from models.device_models import ActivatedGammaP, ContinuumBath, ToyThreePhonon
from services.optomechanics_service import bose_einstein
from services.phonon_service import (
    PhononDomainError, activated_gamma_p, cutoff_frequency, cutoff_temperature, gamma_p_high_T, gamma_p_integral, gamma_p_low_T,
    high_t_coefficient, riemann_zeta, thermal_integral, three_phonon_rates, toy_effective_bath, toy_rates,
    toy_relaxation, upper_incomplete_gamma,
)

OMEGA_M = 3.6e9


@pytest.fixture
def continuum() -> ContinuumBath:
    return ContinuumBath.from_cutoff_temperature(a=3.0, T_c=2.0)


def test_special_functions():
    assert upper_incomplete_gamma(1.0, 2.5) == pytest.approx(math.exp(-2.5))
    assert upper_incomplete_gamma(4.0, 0.0) == pytest.approx(6.0)
    assert riemann_zeta(2.0) == pytest.approx(math.pi ** 2 / 6)
    with pytest.raises(PhononDomainError):
        riemann_zeta(1.0)
    with pytest.raises(PhononDomainError):
        upper_incomplete_gamma(0.0, 1.0)


@pytest.mark.parametrize("a, expected", [(2.0, math.pi ** 2 / 3), (3.0, 7.2123)])
def test_integral_from_zero_matches_closed_form(a, expected):
    assert thermal_integral(a, 0.0) == pytest.approx(expected, rel=1e-4)
    assert high_t_coefficient(a) == pytest.approx(thermal_integral(a, 0.0), rel=1e-8)


def test_integral_domain():
    with pytest.raises(PhononDomainError):
        thermal_integral(1.0, 0.5)
    with pytest.raises(PhononDomainError):
        thermal_integral(3.0, -0.1)
    with pytest.raises(PhononDomainError):
        thermal_integral(3.0, 0.5, variant="optical")


def test_elastic_integrand_without_mechanical_term():
    # x³(x + 0) is the a = 4 power law
    elastic = thermal_integral(3.0, 0.5, variant="continuum_elastic", x_m=0.0)
    assert elastic == pytest.approx(thermal_integral(4.0, 0.5), rel=1e-8)
    assert thermal_integral(3.0, 0.5, variant="continuum_elastic", x_m=0.1) > elastic


def test_cutoff_conversions(continuum):
    assert cutoff_frequency(2.0) == pytest.approx(41.67e9, rel=1e-3)
    assert cutoff_temperature(cutoff_frequency(2.0)) == pytest.approx(2.0)
    assert continuum.T_c == pytest.approx(2.0)


def test_low_temperature_asymptote(continuum):
    # x_c = 20 at the cold end of the default grid
    ratio = gamma_p_integral(continuum, OMEGA_M, 0.1) / gamma_p_low_T(continuum, OMEGA_M, 0.1)
    assert ratio == pytest.approx(1.0, rel=1e-6)
    assert gamma_p_low_T(continuum, OMEGA_M, 0.0) == 0.0


def test_high_temperature_asymptote(continuum):
    # x_c = 0.2 at the hot end; the missing ∫₀^0.2 x dx makes the power law slightly larger
    ratio = gamma_p_high_T(continuum, OMEGA_M, 10.0) / gamma_p_integral(continuum, OMEGA_M, 10.0)
    assert ratio == pytest.approx(1.0028, abs=3e-4)


def test_integral_rises_monotonically_with_temperature(continuum):
    rates = [gamma_p_integral(continuum, OMEGA_M, T) for T in np.geomspace(0.1, 10.0, 9)]
    assert np.all(np.diff(rates) > 0)


def test_activated_form_is_leading_low_temperature_term(continuum):
    law = ActivatedGammaP.from_continuum(continuum, OMEGA_M)
    for T_p in (0.1, 0.25, 0.5):
        assert law(T_p) == pytest.approx(gamma_p_low_T(continuum, OMEGA_M, T_p, leading_order=True))
    assert law.T_c == pytest.approx(2.0)


def test_activated_gamma_p_values():
    assert activated_gamma_p(785.0, 2.0, 0.0) == 0.0
    assert activated_gamma_p(785.0, 2.0, 1.0) == pytest.approx(785.0 * math.exp(-2.0))
    assert activated_gamma_p(785.0, 0.0, 0.5) == pytest.approx(392.5)


def test_toy_bath_values():
    model = ToyThreePhonon.from_upper(omega_1=20e9, omega_m=OMEGA_M, A=1e3, T_p=1.0)
    bath = toy_effective_bath(model)
    assert bath.gamma_p == pytest.approx(214.9, rel=2e-3)
    assert bath.n_p == pytest.approx(5.306, rel=2e-3)


@pytest.mark.parametrize("omega_1", [5e9, 20e9, 80e9])
@pytest.mark.parametrize("T_p", [0.05, 0.3, 1.0, 10.0])
def test_toy_bath_is_thermal_at_mechanical_frequency(omega_1, T_p):
    model = ToyThreePhonon.from_upper(omega_1=omega_1, omega_m=OMEGA_M, A=1e3, T_p=T_p)
    assert toy_effective_bath(model).n_p == pytest.approx(bose_einstein(OMEGA_M, T_p), rel=1e-9)


def test_toy_rates_balance_at_fixed_point():
    model = ToyThreePhonon.from_upper(omega_1=20e9, omega_m=OMEGA_M, A=1e3, T_p=1.0)
    bath = toy_effective_bath(model)
    rates = toy_rates(model, bath.n_p)
    assert rates.gamma_plus == pytest.approx(rates.gamma_minus, rel=1e-12)
    colder = toy_rates(model, 0.5 * bath.n_p)
    assert colder.gamma_plus > colder.gamma_minus
    with pytest.raises(PhononDomainError):
        three_phonon_rates(1.0, -0.1, 1.0, 1.0)


def test_toy_relaxation_approaches_bath_at_rate_gamma_p():
    model = ToyThreePhonon.from_upper(omega_1=20e9, omega_m=OMEGA_M, A=1e3, T_p=1.0)
    bath = toy_effective_bath(model)
    times = np.linspace(0.0, 0.01, 201)
    result = toy_relaxation(model, 0.0, times)
    expected = bath.n_p * (1.0 - np.exp(-2 * math.pi * bath.gamma_p * times))
    np.testing.assert_allclose(result.n_m, expected, rtol=1e-6, atol=1e-9)
    assert result.n_m[-1] == pytest.approx(bath.n_p, rel=1e-4)
    with pytest.raises(PhononDomainError):
        toy_relaxation(model, 0.0, [0.0])


def test_toy_model_requires_energy_conservation():
    with pytest.raises(ValueError):
        ToyThreePhonon(omega_1=20e9, omega_2=15e9, omega_m=OMEGA_M, A=1e3, T_p=1.0)
    with pytest.raises(ValueError):
        ToyThreePhonon(omega_1=10e9, omega_2=13.6e9, omega_m=OMEGA_M, A=1e3, T_p=1.0)
