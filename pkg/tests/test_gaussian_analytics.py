import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.optimize import brentq

from core.errors import DomainError
from core.gaussian_analytics import (
    GammaParameter,
    cd_from_gamma,
    inflexion_gamma,
    invert_visibility,
    phase_closed_form,
    visibility_closed_form,
    visibility_first_derivative,
    visibility_second_derivative,
)

# ============================================================================
# 닫힌 형식
# ============================================================================

@pytest.mark.parametrize("gamma, expected", [
    (0.0, 1.0),
    (math.sqrt(2.0 / 3.0), (5.0 / 3.0) ** -0.25),
    (1.0, 2.0 ** -0.25),
])
def test_visibility_closed_form(gamma, expected):
    assert visibility_closed_form(gamma) == pytest.approx(expected, abs=1e-15)
    assert visibility_closed_form(-gamma) == visibility_closed_form(gamma)


def test_visibility_vectorized():
    values = visibility_closed_form(np.array([0.0, 1.0, 10.0]))
    assert values.shape == (3,)
    assert np.all((values > 0) & (values <= 1))


def test_phase_closed_form():
    assert phase_closed_form(0.0) == 0.0
    assert phase_closed_form(1.0) == pytest.approx(math.pi / 8)


def test_gamma_parameter_consistency():
    gamma = GammaParameter.from_components(3.5e12, 2.2e-26, 2.4)
    assert gamma.value == pytest.approx(2.0 * 3.5e12**2 * 2.2e-26 * 2.4, rel=1e-15)
    with pytest.raises(ValidationError):
        GammaParameter(value=1.0, sigma_omega=3.5e12, beta2=2.2e-26, length=2.4)


# ============================================================================
# 변곡점
# ============================================================================

def test_inflexion_value():
    assert inflexion_gamma() == pytest.approx(0.816497, abs=1e-6)
    assert visibility_closed_form(inflexion_gamma()) == pytest.approx(0.880112, abs=1e-5)


def test_inflexion_numeric_root():
    """중심차분 2차 미분의 근이 √(2/3) 와 1e-6 이내"""
    h = 1e-4

    def second(g):
        return (visibility_closed_form(g + h) - 2 * visibility_closed_form(g) + visibility_closed_form(g - h)) / h**2

    root = brentq(second, 0.5, 1.2, xtol=1e-12)
    assert root == pytest.approx(inflexion_gamma(), abs=1e-6)


def test_derivatives_match_finite_differences():
    h = 1e-4
    for g in np.linspace(0.0, 5.0, 26):
        first = (visibility_closed_form(g + h) - visibility_closed_form(g - h)) / (2 * h)
        second = (visibility_closed_form(g + h) - 2 * visibility_closed_form(g) + visibility_closed_form(g - h)) / h**2
        assert visibility_first_derivative(g) == pytest.approx(first, abs=1e-6)
        assert visibility_second_derivative(g) == pytest.approx(second, abs=1e-6)


# ============================================================================
# 역변환
# ============================================================================

def test_invert_visibility_examples():
    assert invert_visibility(1.0).gamma == 0.0
    assert math.isinf(invert_visibility(1.0).condition_number)
    assert invert_visibility(0.8801).gamma == pytest.approx(math.sqrt(2.0 / 3.0), abs=1e-3)
    assert invert_visibility(2.0 ** -0.25).gamma == pytest.approx(1.0, rel=1e-12)


def test_round_trip_gamma():
    for gamma in np.linspace(0.0, 100.0, 401):
        assert invert_visibility(visibility_closed_form(gamma)).gamma == pytest.approx(gamma, rel=1e-12, abs=1e-7)


@pytest.mark.parametrize("visibility", [0.0, -0.1, 1.0000001])
def test_invert_visibility_domain(visibility):
    with pytest.raises(DomainError):
        invert_visibility(visibility)


def test_condition_number_matches_derivative():
    inversion = invert_visibility(0.88)
    assert inversion.condition_number == pytest.approx(1.0 / abs(visibility_first_derivative(inversion.gamma)),
                                                       rel=1e-9)


# ============================================================================
# CD 변환
# ============================================================================

def test_cd_from_gamma_smf28():
    beta2 = 2.198e-26
    length = 2.4
    gamma = inflexion_gamma()
    sigma = math.sqrt(gamma / (2.0 * beta2 * length))
    value = cd_from_gamma(gamma, sigma, length)
    assert value.beta2 == pytest.approx(beta2, rel=1e-12)
    assert value.dispersion_ps_nm_km == pytest.approx(17.0, rel=2e-3)
    assert GammaParameter.from_components(sigma, value.beta2, length).value == pytest.approx(gamma, rel=1e-12)


def test_cd_from_gamma_linearity():
    assert cd_from_gamma(0.0, 1e12, 1.0).beta2 == 0.0
    single = cd_from_gamma(0.8, 1e12, 2.0).beta2
    double = cd_from_gamma(0.8, 1e12, 4.0).beta2
    assert double == pytest.approx(single / 2.0, rel=1e-15)


def test_cd_from_gamma_preconditions():
    with pytest.raises(DomainError):
        cd_from_gamma(1.0, 0.0, 1.0)
    with pytest.raises(DomainError):
        cd_from_gamma(1.0, 1e12, -1.0)
