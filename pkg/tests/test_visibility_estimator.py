import math

import numpy as np
import pytest
from scipy.stats import kstest

from core.errors import DegenerateTraceError, DomainError, InsufficientDataError
from tools.drift_simulator import (
    CoincidenceTrace,
    DetectorModel,
    UniformRandomPhase,
    derive_seed,
    fringe_probability,
    simulate_trace,
)
from tools.visibility_estimator import (
    EstimationMethod,
    EstimationSettings,
    FitDiagnostics,
    _finalize,
    arcsine_cdf,
    arcsine_pdf,
    estimate_fringefit,
    estimate_minmax,
    estimate_pdf_fit,
    estimate_visibility,
)

# ============================================================================
# 아크사인 분포
# ============================================================================

def test_arcsine_cdf_values():
    v = 0.8
    assert arcsine_cdf(0.5, v) == pytest.approx(0.5)
    assert arcsine_cdf(0.5 + v / 2, v) == pytest.approx(1.0)
    assert arcsine_cdf(0.5 - v / 2, v) == pytest.approx(0.0)


def test_arcsine_cdf_clamps_outside_support():
    value, clamped = arcsine_cdf(0.99, 0.5, return_clamped=True)
    assert value == 1.0
    assert clamped
    _, inside = arcsine_cdf(np.array([0.4, 0.6]), 0.5, return_clamped=True)
    assert not inside


def test_arcsine_pdf_is_cdf_derivative():
    v = 0.7
    h = 1e-7
    for x in np.linspace(0.5 - 0.3, 0.5 + 0.3, 13):
        numeric = (arcsine_cdf(x + h, v) - arcsine_cdf(x - h, v)) / (2 * h)
        assert arcsine_pdf(x, v) == pytest.approx(numeric, rel=1e-5)


def test_arcsine_pdf_edges_and_outside():
    v = 0.5
    assert math.isinf(arcsine_pdf(0.25, v))
    assert arcsine_pdf(0.9, v) == 0.0
    with pytest.raises(DomainError):
        arcsine_pdf(0.9, v, strict=True)


@pytest.mark.parametrize("visibility", [0.0, -0.2, 1.5])
def test_arcsine_visibility_domain(visibility):
    with pytest.raises(DomainError):
        arcsine_cdf(0.5, visibility)
    with pytest.raises(DomainError):
        arcsine_pdf(0.5, visibility)


@pytest.mark.parametrize("visibility", [0.5, 0.75, 0.9])
def test_uniform_phase_samples_follow_arcsine_cdf(visibility):
    """균일 위상 10⁴ 표본의 ½(1 + V cos φ) 경험 CDF 와 아크사인 CDF 의 KS 거리"""
    phases = np.random.default_rng(17).uniform(0.0, 2.0 * math.pi, 10_000)
    samples = fringe_probability(phases, visibility)
    result = kstest(samples, lambda x: arcsine_cdf(x, visibility))
    assert result.statistic < 0.02


# ============================================================================
# Min/Max
# ============================================================================

def test_minmax_noiseless(noiseless_fringe_counts):
    trace = CoincidenceTrace.from_counts(noiseless_fringe_counts(0.88))
    estimate = estimate_minmax(trace)
    assert estimate.visibility == pytest.approx(0.88, abs=5e-3)
    assert estimate.method is EstimationMethod.MINMAX
    assert estimate.std_error >= 0.0


def test_minmax_bootstrap_reproducible():
    trace = simulate_trace(0.7, 0.0, UniformRandomPhase(), DetectorModel(seed=9), 1000)
    assert estimate_minmax(trace, seed=1) == estimate_minmax(trace, seed=1)


def test_minmax_errors():
    with pytest.raises(InsufficientDataError):
        estimate_minmax(CoincidenceTrace.from_counts([5] * 9))
    with pytest.raises(DegenerateTraceError):
        estimate_minmax(CoincidenceTrace.from_counts([0] * 50))


# ============================================================================
# 무늬 피팅
# ============================================================================

def _sinusoid_trace(visibility: float, frequency: float, n_bins: int = 400, bin_duration: float = 0.1):
    t = np.arange(n_bins) * bin_duration
    counts = 1000.0 * (1.0 + visibility * np.cos(2.0 * math.pi * frequency * t + 0.3))
    return CoincidenceTrace.from_counts(np.rint(counts), bin_duration=bin_duration)


def test_fringefit_noiseless_sinusoid():
    estimate = estimate_fringefit(_sinusoid_trace(0.7, 0.5))
    assert estimate.visibility == pytest.approx(0.7, abs=1e-3)
    assert estimate.fit_diagnostics.n_bins_used == 400


def test_fringefit_window():
    estimate = estimate_fringefit(_sinusoid_trace(0.6, 0.5), window=(100, 300))
    assert estimate.fit_diagnostics.n_bins_used == 200
    assert estimate.visibility == pytest.approx(0.6, abs=1e-3)


def test_fringefit_rejects_short_or_flat_windows():
    with pytest.raises(InsufficientDataError):
        estimate_fringefit(CoincidenceTrace.from_counts([1, 2, 3]))
    with pytest.raises(InsufficientDataError):
        estimate_fringefit(CoincidenceTrace.from_counts([7] * 100))
    with pytest.raises(InsufficientDataError):
        estimate_fringefit(_sinusoid_trace(0.8, 0.01, n_bins=400))


# ============================================================================
# 아크사인 PDF 피팅
# ============================================================================

@pytest.mark.parametrize("visibility", [0.3, 0.6, 0.88, 0.95])
def test_pdf_fit_noiseless(noiseless_fringe_counts, visibility):
    trace = CoincidenceTrace.from_counts(noiseless_fringe_counts(visibility))
    estimate = estimate_pdf_fit(trace)
    assert estimate.visibility == pytest.approx(visibility, abs=2e-3)
    assert estimate.fit_diagnostics.histogram is not None


def test_pdf_fit_scale_invariant(noiseless_fringe_counts):
    counts = noiseless_fringe_counts(0.88)
    base = estimate_pdf_fit(CoincidenceTrace.from_counts(counts))
    scaled = estimate_pdf_fit(CoincidenceTrace.from_counts(3 * counts))
    assert scaled.visibility == pytest.approx(base.visibility, abs=1e-12)
    assert scaled.fit_diagnostics.scale_estimate == pytest.approx(3 * base.fit_diagnostics.scale_estimate, rel=1e-9)


def test_pdf_fit_simulated_trace():
    trace = simulate_trace(0.88, 0.0, UniformRandomPhase(), DetectorModel(seed=21), 10_000)
    estimate = estimate_pdf_fit(trace)
    assert estimate.visibility == pytest.approx(0.88, abs=0.02)


def test_pdf_fit_poisson_mixture():
    trace = simulate_trace(0.88, 0.0, UniformRandomPhase(), DetectorModel(seed=4), 3000)
    estimate = estimate_pdf_fit(trace, likelihood="poisson_mixture")
    assert estimate.visibility == pytest.approx(0.88, abs=0.02)
    assert 0.0 < estimate.std_error < 0.05
    assert "likelihood=poisson_mixture" in estimate.warnings


def test_pdf_fit_poisson_least_squares():
    trace = simulate_trace(0.88, 0.0, UniformRandomPhase(), DetectorModel(seed=4), 3000)
    estimate = estimate_pdf_fit(trace, likelihood="poisson_least_squares")
    assert estimate.visibility == pytest.approx(0.88, abs=0.02)
    assert 0.0 < estimate.std_error < 0.05
    assert "likelihood=poisson_least_squares" in estimate.warnings
    histogram = estimate.fit_diagnostics.histogram
    assert sum(histogram.fit_value) == pytest.approx(3000, rel=0.01)


def test_pdf_fit_errors():
    with pytest.raises(InsufficientDataError):
        estimate_pdf_fit(CoincidenceTrace.from_counts(np.arange(50)))
    with pytest.raises(DegenerateTraceError):
        estimate_pdf_fit(CoincidenceTrace.from_counts([0] * 200))
    with pytest.raises(InsufficientDataError):
        estimate_pdf_fit(CoincidenceTrace.from_counts([12] * 200))


# ============================================================================
# 디스패처 / 보고서
# ============================================================================

def test_dispatch_matches_direct_call():
    trace = simulate_trace(0.5, 0.0, UniformRandomPhase(), DetectorModel(seed=2), 800)
    settings = EstimationSettings(method=EstimationMethod.MINMAX, seed=5)
    assert estimate_visibility(trace, settings) == estimate_minmax(trace, seed=5)
    assert estimate_visibility(trace).method is EstimationMethod.PDF_FIT


def test_report_shape(noiseless_fringe_counts):
    estimate = estimate_pdf_fit(CoincidenceTrace.from_counts(noiseless_fringe_counts(0.5)))
    report = estimate.to_report()
    assert report["schema"] == 1
    assert report["method"] == "pdf_fit"
    assert set(report) == {"schema", "method", "visibility", "std_error", "n_bins_used", "scale", "warnings"}


def test_non_finite_std_error_is_kept_infinite():
    diagnostics = FitDiagnostics(n_bins_used=10, residual_norm=0.0, scale_estimate=1.0, raw_visibility=0.5)
    estimate = _finalize(0.5, math.nan, EstimationMethod.PDF_FIT, diagnostics, [])
    assert math.isinf(estimate.std_error)
    assert "std_error not finite" in estimate.warnings


# ============================================================================
# 추정기 간 일치 / 통계적 성질
# ============================================================================

def _periodic_trace(visibility: float, n_bins: int = 10_000, periods: int = 20, scale: float = 1e6):
    """정수 주기 수만큼 위상을 균일하게 훑는 잡음 없는 트레이스"""
    phases = 2.0 * math.pi * periods * (np.arange(n_bins) + 0.5) / n_bins
    counts = scale * (1.0 + visibility * np.cos(phases + 0.4)) / (1.0 + visibility)
    return CoincidenceTrace.from_counts(np.rint(counts), bin_duration=0.1)


@pytest.mark.parametrize("visibility", [0.3, 0.6, 0.88, 0.95])
def test_estimators_agree_on_noiseless_trace(visibility):
    trace = _periodic_trace(visibility)
    values = [
        estimate_minmax(trace).visibility,
        estimate_fringefit(trace).visibility,
        estimate_pdf_fit(trace).visibility,
    ]
    for value in values:
        assert value == pytest.approx(visibility, rel=0.005)
    assert max(values) - min(values) < 0.005 * visibility


def test_std_error_scales_as_inverse_sqrt_bins():
    sizes = [250, 500, 1000, 2000]
    mean_errors = []
    for n_bins in sizes:
        errors = [estimate_pdf_fit(simulate_trace(0.88, 0.0, UniformRandomPhase(),
                                                  DetectorModel(seed=derive_seed(n_bins, k)), n_bins)).std_error
                  for k in range(5)]
        mean_errors.append(np.mean(errors))
    slope = np.polyfit(np.log(sizes), np.log(mean_errors), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.15)


@pytest.mark.slow
def test_recovery_over_200_traces_and_minmax_bias():
    """500 빈, 최대 평균 1000 계수, V = 0.88 에서 평균 V̂ 와 min/max 편향"""
    truth = 0.88
    traces = [simulate_trace(truth, 0.0, UniformRandomPhase(), DetectorModel(seed=derive_seed(88, k)), 500)
              for k in range(200)]
    plain = np.mean([estimate_pdf_fit(t).visibility for t in traces])
    corrected = np.mean([estimate_pdf_fit(t, likelihood="poisson_least_squares").visibility for t in traces])
    minmax = np.mean([estimate_minmax(t, n_resamples=20).visibility for t in traces])

    assert corrected == pytest.approx(truth, rel=0.005)
    # 잡음 없는 점유수 모델은 Poisson 번짐 때문에 약 +0.8% 과대
    plain_bias = (plain - truth) / truth
    assert 0.0 < plain_bias < 0.015
    # min/max 는 Poisson 극값 때문에 더 크게 위로 치우침 (약 +1.7%)
    minmax_bias = (minmax - truth) / truth
    assert 0.005 < minmax_bias < 0.05
    assert minmax_bias > plain_bias
    assert minmax_bias > abs(corrected - truth) / truth
