import math

import numpy as np
import pytest
from scipy.special import fresnel

from core.errors import InvalidSpectrumError
from core.gaussian_analytics import phase_closed_form, visibility_closed_form
from core.interferogram import (
    InterferogramDecomposition,
    VisibilityPhase,
    coincidence_interferogram,
    franson_visibility_phase,
    hom_autocorrelation,
    noon_phase,
    wrap_phase,
)
from core.spectrum import DispersionProfile, SpectralDensity

SIGMA = 3.5e12
HALF_WIDTH = 1.0e12


def _beta2_for_gamma(gamma: float, length: float = 1.0) -> float:
    return gamma / (2.0 * SIGMA**2 * length)


def _rectangular_oracle(edge_phase: float) -> float:
    """균일 스펙트럼 V = |C_F(z) + i·S_F(z)| / z, z = √(2u/π)"""
    z = math.sqrt(2.0 * edge_phase / math.pi)
    s_f, c_f = fresnel(z)
    return math.hypot(c_f, s_f) / z


# ============================================================================
# 가우시안: 닫힌 형식과 비교
# ============================================================================

@pytest.mark.parametrize("gamma", [0.0, 0.1, 0.5, math.sqrt(2.0 / 3.0), 1.0, 2.0, 5.0, 10.0])
def test_gaussian_matches_closed_form(gamma):
    result = franson_visibility_phase(SpectralDensity.gaussian(SIGMA), _beta2_for_gamma(gamma), 1.0)
    assert abs(result.visibility - visibility_closed_form(gamma)) < 1e-8
    assert result.phase == pytest.approx(phase_closed_form(gamma), abs=1e-8)


def test_zero_dispersion_full_visibility():
    result = franson_visibility_phase(SpectralDensity.gaussian(SIGMA), 0.0, 3.0)
    assert result == VisibilityPhase(visibility=1.0, phase=0.0)


def test_visibility_independent_of_dispersion_sign():
    spectrum = SpectralDensity.gaussian(SIGMA)
    positive = franson_visibility_phase(spectrum, _beta2_for_gamma(1.3), 1.0)
    negative = franson_visibility_phase(spectrum, -_beta2_for_gamma(1.3), 1.0)
    assert positive.visibility == pytest.approx(negative.visibility, abs=1e-12)
    assert positive.phase == pytest.approx(-negative.phase, abs=1e-12)


# ============================================================================
# 직사각형: Fresnel 적분과 비교
# ============================================================================

@pytest.mark.parametrize("edge_phase", [0.1, 0.5, 1.0, 1.7, 3.0, 5.0])
def test_rectangular_matches_fresnel(edge_phase):
    beta2 = edge_phase / HALF_WIDTH**2
    result = franson_visibility_phase(SpectralDensity.rectangular(HALF_WIDTH), beta2, 1.0)
    assert abs(result.visibility - _rectangular_oracle(edge_phase)) < 1e-8


@pytest.mark.parametrize("u", [0.1, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0])
def test_rectangular_matches_fresnel_up_to_u5(u):
    """u = W·√(2β⁽²⁾L/π), 가장자리 위상 β⁽²⁾W² = πu²/2"""
    edge_phase = math.pi * u * u / 2.0
    result = franson_visibility_phase(SpectralDensity.rectangular(HALF_WIDTH), edge_phase / HALF_WIDTH**2, 1.0)
    assert abs(result.visibility - _rectangular_oracle(edge_phase)) < 1e-6
    if u == 1.0:
        s_f, c_f = fresnel(1.0)
        assert result.visibility == pytest.approx(math.hypot(c_f, s_f), abs=1e-6)


def test_rectangular_monotone_on_low_dispersion():
    spectrum = SpectralDensity.rectangular(HALF_WIDTH)
    values = [franson_visibility_phase(spectrum, u / HALF_WIDTH**2, 1.0).visibility
              for u in np.linspace(0.05, 1.5, 15)]
    assert all(b < a for a, b in zip(values, values[1:]))


def test_tabulated_gaussian_close_to_closed_form():
    grid = np.linspace(-8 * SIGMA, 8 * SIGMA, 4001)
    spectrum = SpectralDensity.tabulated(grid, np.exp(-0.5 * (grid / SIGMA) ** 2))
    result = franson_visibility_phase(spectrum, _beta2_for_gamma(1.0), 1.0)
    assert result.visibility == pytest.approx(visibility_closed_form(1.0), abs=1e-5)


def test_visibility_never_exceeds_one():
    rng = np.random.default_rng(11)
    grid = np.linspace(-2e12, 2e12, 81)
    spectrum = SpectralDensity.tabulated(grid, rng.uniform(0.1, 1.0, grid.size))
    for gamma in (0.0, 0.3, 2.0):
        assert 0.0 <= franson_visibility_phase(spectrum, _beta2_for_gamma(gamma), 1.0).visibility <= 1.0


def test_zero_spectrum_rejected():
    grid = np.linspace(-1e12, 1e12, 5)
    with pytest.raises(InvalidSpectrumError):
        franson_visibility_phase(SpectralDensity.tabulated(grid, np.zeros(5)), 1e-26, 1.0)


# ============================================================================
# 확장 위상 (β⁽⁴⁾ 이상)
# ============================================================================

def test_fourth_order_changes_visibility_only_when_enabled():
    sigma = 1e12
    beta2 = 0.5 / (2.0 * sigma**2)
    beta4 = 12.0 / sigma**4
    spectrum = SpectralDensity.gaussian(sigma)
    base = franson_visibility_phase(spectrum, beta2, 1.0)
    extended = franson_visibility_phase(spectrum, beta2, 1.0, extended_betas=(beta4,))
    assert abs(extended.visibility - base.visibility) > 1e-3

    profile = DispersionProfile(length=1.0, betas=(0.0, 0.0, beta2, 0.0, beta4))
    plain = coincidence_interferogram(spectrum, profile)
    assert plain.franson_term.visibility == pytest.approx(base.visibility, abs=1e-12)


# ============================================================================
# 분해: 홀수 차수 / HOM 항
# ============================================================================

def test_odd_orders_do_not_change_franson_term():
    spectrum = SpectralDensity.gaussian(SIGMA)
    beta2 = _beta2_for_gamma(0.8)
    even_only = coincidence_interferogram(spectrum, DispersionProfile(length=1.0, betas=(0.0, 0.0, beta2)))
    with_odd = coincidence_interferogram(
        spectrum, DispersionProfile(length=1.0, betas=(0.0, 5e-13, beta2, 1.2e-40)))
    assert with_odd.franson_term == even_only.franson_term
    assert even_only.hom_term == 1.0
    assert with_odd.hom_term < 0.05


def test_hom_term_gaussian_delay():
    """선형 위상 τ = 2β⁽¹⁾L → exp(−σ²τ²/2)"""
    sigma = 1e12
    tau = 1e-12
    profile = DispersionProfile(length=1.0, betas=(0.0, tau / 2.0, 0.0))
    value = hom_autocorrelation(SpectralDensity.gaussian(sigma), profile)
    assert value == pytest.approx(math.exp(-0.5 * (sigma * tau) ** 2), abs=1e-8)


def test_coincidence_probability_terms():
    franson = VisibilityPhase(visibility=1.0, phase=0.0)
    decomposition = InterferogramDecomposition(franson_term=franson, hom_term=0.0)
    assert decomposition.coincidence_probability() == pytest.approx(0.25)
    assert decomposition.coincidence_probability(math.pi) == pytest.approx(0.75)
    with_hom = decomposition.model_copy(update={"hom_term": 1.0})
    assert with_hom.coincidence_probability() == pytest.approx(0.0)


def test_noon_phase_cancels_odd_orders():
    profile = DispersionProfile(length=2.0, betas=(5.0, 3.0, 1e-26, 7e-40))
    w = 1e12
    assert noon_phase(profile, w) == pytest.approx(2.0 * (2.0 * 5.0 + 1e-26 * w**2), rel=1e-14)
    assert noon_phase(profile, w) == noon_phase(profile, -w)


@pytest.mark.parametrize("raw, expected", [
    (0.0, 0.0),
    (2.5 * math.pi, math.pi / 2),
    (-math.pi, math.pi),
    (math.pi / 2 + 4.0 * math.pi, math.pi / 2),
])
def test_wrap_phase(raw, expected):
    assert wrap_phase(raw) == pytest.approx(expected, abs=1e-12)
