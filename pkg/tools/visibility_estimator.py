import math
import logging
from enum import Enum
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import curve_fit, minimize
from scipy.special import gammaln, logsumexp
from scipy.stats import poisson

from core.errors import DegenerateTraceError, DomainError, FitError, InsufficientDataError, handle_error
from tools.drift_simulator import CoincidenceTrace

# ============================================================================
# 설정 및 초기화
# ============================================================================

logger = logging.getLogger(__name__)

MINMAX_MIN_BINS = 10
PDF_FIT_MIN_BINS = 100
HISTOGRAM_MIN_BINS = 20
MIN_POPULATED_BINS = 5
MIXTURE_PHASE_GRID = 256
CONVOLUTION_PHASE_GRID = 256
HESSIAN_STEP = 1e-3

Likelihood = Literal["least_squares", "poisson_least_squares", "poisson_mixture"]


class EstimationMethod(str, Enum):
    MINMAX = "minmax"
    FRINGE_FIT = "fringe_fit"
    PDF_FIT = "pdf_fit"


class HistogramData(BaseModel):
    """계수 히스토그램과 피팅된 점유수 (플롯용)"""
    bin_left: list[float]
    bin_right: list[float]
    count: list[int]
    fit_value: list[float]


class FitDiagnostics(BaseModel):
    n_bins_used: int
    residual_norm: float
    scale_estimate: float      # C_max + C_min
    raw_visibility: float      # 클램프 이전 값
    histogram: Optional[HistogramData] = None


class VisibilityEstimate(BaseModel):
    visibility: float = Field(ge=0.0, le=1.0)
    std_error: float = Field(ge=0.0)
    method: EstimationMethod
    fit_diagnostics: FitDiagnostics
    warnings: list[str] = Field(default_factory=list)

    def to_report(self) -> dict:
        """추정 보고서 JSON 본문"""
        return {
            "schema": 1,
            "method": self.method.value,
            "visibility": self.visibility,
            "std_error": self.std_error,
            "n_bins_used": self.fit_diagnostics.n_bins_used,
            "scale": self.fit_diagnostics.scale_estimate,
            "warnings": list(self.warnings),
        }


class EstimationSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    method: EstimationMethod = EstimationMethod.PDF_FIT
    quantile: float = Field(default=0.02, gt=0.0, lt=0.5)
    bootstrap_resamples: int = Field(default=200, ge=2)
    seed: int = Field(default=0, ge=0)
    window: Optional[tuple[int, int]] = None
    min_bins: int = Field(default=PDF_FIT_MIN_BINS, ge=1)
    histogram_min_bins: int = Field(default=HISTOGRAM_MIN_BINS, ge=2)
    likelihood: Likelihood = "least_squares"


def _finalize(raw: float, std_error: float, method: EstimationMethod, diagnostics: FitDiagnostics,
              warnings: list[str]) -> VisibilityEstimate:
    """[0, 1] 클램프, 원래 값은 fit_diagnostics 에 보존

    공분산을 구하지 못한 std_error 는 +∞ 로 남긴다.
    """
    visibility = min(max(raw, 0.0), 1.0)
    if visibility != raw:
        warnings.append(f"visibility {raw:.6f} clamped to {visibility:.6f}")
    if not math.isfinite(std_error) or std_error < 0.0:
        warnings.append("std_error not finite")
        std_error = math.inf
    return VisibilityEstimate(
        visibility=visibility,
        std_error=std_error,
        method=method,
        fit_diagnostics=diagnostics,
        warnings=warnings,
    )


# ============================================================================
# 아크사인 분포
# ============================================================================

def _check_visibility(visibility: float) -> None:
    if not (0.0 < visibility <= 1.0):
        raise DomainError(f"가시도는 (0, 1] 범위여야 합니다: {visibility!r}")


def arcsine_cdf(x, visibility: float, return_clamped: bool = False):
    """F(x) = asin((2/V)(x − ½))/π + ½, 지지 구간 밖의 x 는 가장 가까운 끝으로 클램프"""
    _check_visibility(visibility)
    values = np.asarray(x, dtype=float)
    u = (2.0 / visibility) * (values - 0.5)
    clamped = bool(np.any(np.abs(u) > 1.0))
    result = np.arcsin(np.clip(u, -1.0, 1.0)) / math.pi + 0.5
    result = float(result) if result.ndim == 0 else result
    return (result, clamped) if return_clamped else result


def arcsine_pdf(x, visibility: float, strict: bool = False):
    """f(x) = 2/(πV·√(1 + (−4x² + 4x − 1)/V²)), 끝점에서 +∞, 밖에서 0

    strict=True 이면 끝점이나 지지 구간 밖의 x 에 대해 DomainError.
    """
    _check_visibility(visibility)
    values = np.asarray(x, dtype=float)
    u = (2.0 * values - 1.0) / visibility
    inside = np.abs(u) < 1.0
    if strict and not np.all(inside):
        raise DomainError("x 가 지지 구간 내부에 있어야 합니다")
    with np.errstate(divide="ignore", invalid="ignore"):
        density = 2.0 / (math.pi * visibility * np.sqrt(1.0 - u * u))
    result = np.where(inside, density, np.where(np.abs(u) == 1.0, np.inf, 0.0))
    return float(result) if result.ndim == 0 else result


# ============================================================================
# Min/Max 추정
# ============================================================================

def _minmax_visibility(sorted_counts: np.ndarray, k: int) -> tuple[float, float, float]:
    c_min = sorted_counts[..., :k].mean(axis=-1)
    c_max = sorted_counts[..., -k:].mean(axis=-1)
    return c_max, c_min, c_max + c_min


def estimate_minmax(trace: CoincidenceTrace, quantile: float = 0.02, n_resamples: int = 200,
                    seed: int = 0) -> VisibilityEstimate:
    """V = (C_max − C_min)/(C_max + C_min), 극값은 상·하위 quantile 빈의 평균"""
    counts = trace.counts_array().astype(float)
    n = counts.size
    if n < MINMAX_MIN_BINS:
        raise InsufficientDataError(f"min/max 추정에는 {MINMAX_MIN_BINS}개 이상의 빈이 필요합니다 (n={n})")
    k = max(1, math.ceil(quantile * n))
    c_max, c_min, scale = _minmax_visibility(np.sort(counts), k)
    if scale == 0.0:
        raise DegenerateTraceError("C_max + C_min = 0")
    raw = float((c_max - c_min) / scale)

    rng = np.random.default_rng(seed)
    resampled = np.sort(counts[rng.integers(0, n, size=(n_resamples, n))], axis=1)
    b_max, b_min, b_scale = _minmax_visibility(resampled, k)
    with np.errstate(divide="ignore", invalid="ignore"):
        boot = np.where(b_scale > 0.0, (b_max - b_min) / b_scale, 0.0)
    std_error = float(np.std(boot, ddof=1))

    diagnostics = FitDiagnostics(n_bins_used=n, residual_norm=0.0, scale_estimate=float(scale), raw_visibility=raw)
    return _finalize(raw, std_error, EstimationMethod.MINMAX, diagnostics, [])


# ============================================================================
# 무늬 피팅 추정
# ============================================================================

def _fringe_model(t, amplitude, visibility, omega, phi0):
    return amplitude * (1.0 + visibility * np.cos(omega * t + phi0))


def _fringe_initial_guess(t: np.ndarray, y: np.ndarray, bin_duration: float) -> list[float]:
    """영 채움 FFT 피크로 초기 (A, V, ω, φ₀)"""
    n = y.size
    n_fft = 8 * n
    spectrum = np.fft.rfft(y - y.mean(), n=n_fft)
    peak = int(np.argmax(np.abs(spectrum[1:]))) + 1
    omega = 2.0 * math.pi * peak / (n_fft * bin_duration)
    amplitude = y.mean()
    modulation = 2.0 * np.abs(spectrum[peak]) / n
    visibility = float(np.clip(modulation / amplitude, 0.01, 0.99)) if amplitude > 0 else 0.5
    return [amplitude, visibility, omega, float(np.angle(spectrum[peak]))]


def estimate_fringefit(trace: CoincidenceTrace, window: Optional[tuple[int, int]] = None) -> VisibilityEstimate:
    """A·(1 + V·cos(ωt + φ₀)) 최소제곱 피팅, window 는 [start, stop) 빈 범위"""
    start, stop = window if window is not None else (0, len(trace))
    y = trace.counts_array()[start:stop].astype(float)
    t = trace.times()[start:stop]
    if y.size < 4:
        raise InsufficientDataError(f"피팅 구간의 빈이 너무 적습니다 (n={y.size})")
    if np.all(y == y[0]):
        raise InsufficientDataError("피팅 구간에 진동이 없습니다")
    duration = y.size * trace.bin_duration

    p0 = _fringe_initial_guess(t - t[0], y, trace.bin_duration)
    if p0[2] * duration / (2.0 * math.pi) < 1.0:
        raise InsufficientDataError("피팅 구간에 완전한 진동이 1회 미만입니다")

    sigma = np.sqrt(np.maximum(y, 1.0))
    try:
        params, pcov = curve_fit(_fringe_model, t - t[0], y, p0=p0, sigma=sigma,
                                 absolute_sigma=True, maxfev=20_000)
    except (RuntimeError, ValueError) as e:
        raise FitError(f"무늬 피팅 미수렴: {e}", diagnostics={"initial_guess": p0}) from e

    amplitude, visibility, omega, _ = params
    if abs(omega) * duration / (2.0 * math.pi) < 1.0:
        raise InsufficientDataError("피팅된 진동수가 구간 내 1회 미만입니다")
    residuals = (y - _fringe_model(t - t[0], *params)) / sigma
    diagnostics = FitDiagnostics(
        n_bins_used=int(y.size),
        residual_norm=float(np.linalg.norm(residuals)),
        scale_estimate=float(2.0 * abs(amplitude)),
        raw_visibility=float(abs(visibility)),
    )
    std_error = float(np.sqrt(pcov[1, 1])) if np.isfinite(pcov[1, 1]) else math.inf
    return _finalize(float(abs(visibility)), std_error, EstimationMethod.FRINGE_FIT, diagnostics, [])


# ============================================================================
# 아크사인 PDF 피팅 추정
# ============================================================================

def _histogram_edges(x: np.ndarray, min_bins: int) -> np.ndarray:
    """Freedman–Diaconis 폭, 최소 min_bins 개"""
    edges = np.histogram_bin_edges(x, bins="fd")
    if edges.size - 1 < min_bins:
        edges = np.linspace(x.min(), x.max(), min_bins + 1)
    return edges


def _occupancy(edges: np.ndarray, n_samples: int, scale: float, visibility: float) -> np.ndarray:
    """n·(F(b/S) − F(a/S)) 기대 점유수"""
    cdf = arcsine_cdf(edges / scale, visibility)
    return n_samples * np.diff(cdf)


def _phase_grid(size: int) -> np.ndarray:
    """[0, 2π) 중점 격자, cos θ = −1 을 정확히 밟지 않음"""
    return (np.arange(size) + 0.5) * (2.0 * math.pi / size)


def _poisson_occupancy(edges: np.ndarray, peak: float, n_samples: int, scale: float,
                       visibility: float) -> np.ndarray:
    """Poisson 계수 잡음을 포함한 기대 점유수

    빈 [a, b) 의 정규화 계수 x = c/peak 에 대해, 위상 격자 평균
    ⟨P(ceil(a·peak) ≤ c ≤ ceil(b·peak) − 1 | μ(θ))⟩ 를 사용한다. 마지막 빈은 오른쪽 끝 포함.
    """
    count_edges = np.ceil(edges * peak - 1e-9) - 1.0
    count_edges[-1] = np.floor(edges[-1] * peak + 1e-9)
    mean = 0.5 * scale * peak * (1.0 + visibility * np.cos(_phase_grid(CONVOLUTION_PHASE_GRID)))
    cdf = poisson.cdf(count_edges[:, None], mean[None, :]).mean(axis=1)
    return n_samples * np.diff(cdf)


def _mixture_negloglik(unique_counts: np.ndarray, multiplicity: np.ndarray, log_factorial: np.ndarray,
                       scale: float, visibility: float) -> float:
    mean = 0.5 * scale * (1.0 + visibility * np.cos(_phase_grid(MIXTURE_PHASE_GRID)))
    log_terms = unique_counts[:, None] * np.log(mean)[None, :] - mean[None, :] - log_factorial[:, None]
    log_p = logsumexp(log_terms, axis=1) - math.log(MIXTURE_PHASE_GRID)
    return float(-np.sum(multiplicity * log_p))


def _fit_poisson_mixture(counts: np.ndarray, scale0: float, visibility0: float) -> tuple[float, float, float, float]:
    """φ ~ Uniform 위의 Poisson 혼합 최대우도, (S, V, σ_V, −logL)

    (log S, logit V) 공간에서 최적화하고 같은 공간의 중심차분 헤시안을 V 로 전파한다.
    """
    unique_counts, multiplicity = np.unique(counts.astype(np.int64), return_counts=True)
    unique_counts = unique_counts.astype(float)
    log_factorial = gammaln(unique_counts + 1.0)

    def objective(p):
        scale = math.exp(p[0])
        visibility = 1.0 / (1.0 + math.exp(-p[1]))
        return _mixture_negloglik(unique_counts, multiplicity, log_factorial, scale, visibility)

    v0 = min(max(visibility0, 1e-4), 1.0 - 1e-4)
    x0 = [math.log(scale0), math.log(v0 / (1.0 - v0))]
    result = minimize(objective, x0, method="L-BFGS-B")
    if not result.success:
        # 선탐색 종료는 평탄한 V ≈ 1 근처에서 흔함, 시작점보다 나아졌으면 수용
        if not (np.isfinite(result.fun) and result.fun <= objective(x0)):
            raise FitError(f"Poisson 혼합 최대우도 미수렴: {result.message}", diagnostics={"x0": x0})
        logger.warning(f"⚠️ Poisson 혼합 최대우도 조기 종료, 최선값 사용: {result.message}")
    scale = math.exp(result.x[0])
    visibility = 1.0 / (1.0 + math.exp(-result.x[1]))

    center = np.asarray(result.x, dtype=float)
    hessian = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            ei = np.eye(2)[i] * HESSIAN_STEP
            ej = np.eye(2)[j] * HESSIAN_STEP
            hessian[i, j] = (objective(center + ei + ej) - objective(center + ei - ej)
                             - objective(center - ei + ej) + objective(center - ei - ej)) / (4.0 * HESSIAN_STEP ** 2)
    try:
        covariance = np.linalg.inv(hessian)
        logit_variance = covariance[1, 1]
        # dV/d(logit V) = V(1 − V)
        std_error = math.sqrt(logit_variance) * visibility * (1.0 - visibility) if logit_variance > 0 else math.inf
    except np.linalg.LinAlgError:
        std_error = math.inf
    return scale, visibility, std_error, float(result.fun)


def _fit_poisson_occupancy(occupancy, left: np.ndarray, observed_left: np.ndarray, sigma: np.ndarray,
                           initial: tuple[float, float]) -> tuple[float, float, float, np.ndarray]:
    """Poisson 잡음 포함 점유수에 왼쪽 빈 최소제곱, (S, V, σ_V, 최종 가중치)

    첫 피팅은 관측 점유수 가중, 두 번째는 첫 피팅 모델의 점유수 가중.
    """
    index = left.astype(float)

    def model(x, scale, visibility):
        return occupancy(scale, visibility)[x.astype(int)]

    params = list(initial)
    pcov = np.full((2, 2), np.inf)
    for _ in range(2):
        try:
            params, pcov = curve_fit(model, index, observed_left, p0=params, sigma=sigma, absolute_sigma=True,
                                     bounds=([1e-9, 1e-6], [np.inf, 1.0]), maxfev=20_000)
        except (RuntimeError, ValueError) as e:
            raise FitError(f"Poisson 점유수 피팅 미수렴: {e}",
                           diagnostics={"initial_guess": list(initial), "n_left_bins": int(left.size)}) from e
        sigma = np.sqrt(np.maximum(model(index, *params), 1.0))
    std_error = float(np.sqrt(pcov[1, 1])) if np.isfinite(pcov[1, 1]) else math.inf
    return float(params[0]), float(params[1]), std_error, sigma


def estimate_pdf_fit(trace: CoincidenceTrace, min_bins: int = PDF_FIT_MIN_BINS,
                     histogram_min_bins: int = HISTOGRAM_MIN_BINS,
                     likelihood: Likelihood = "least_squares") -> VisibilityEstimate:
    """계수 히스토그램의 왼쪽 부분(중앙값 이하 빈)에 계수 공간 아크사인 분포 피팅

    자유 변수는 척도 S = C_max + C_min 와 V. 계수는 최대값으로 나눈 뒤 피팅하므로
    계수 전체를 상수배해도 V 는 변하지 않는다.

    likelihood:
        least_squares: 잡음 없는 아크사인 점유수 (Poisson 번짐으로 V 가 약 +0.8% 과대)
        poisson_least_squares: Poisson 번짐을 포함한 점유수, 같은 왼쪽 빈
        poisson_mixture: 전체 계수의 Poisson 혼합 최대우도
    """
    counts = trace.counts_array().astype(float)
    n = counts.size
    if n < min_bins:
        raise InsufficientDataError(f"PDF 피팅에는 {min_bins}개 이상의 빈이 필요합니다 (n={n})")
    peak = counts.max()
    if peak == 0.0:
        raise DegenerateTraceError("모든 빈의 계수가 0 입니다")
    x = counts / peak
    if x.min() == x.max():
        raise InsufficientDataError("히스토그램에 채워진 빈이 1개뿐입니다")

    edges = _histogram_edges(x, histogram_min_bins)
    observed, _ = np.histogram(x, bins=edges)
    populated = int(np.count_nonzero(observed))
    if populated < MIN_POPULATED_BINS:
        raise InsufficientDataError(f"채워진 히스토그램 빈이 {populated}개로 부족합니다")

    centers = 0.5 * (edges[:-1] + edges[1:])
    left = np.flatnonzero(centers <= np.median(x))
    if left.size < 3:
        raise InsufficientDataError("왼쪽 히스토그램 빈이 3개 미만입니다")

    lo, hi = np.quantile(x, [0.02, 0.98])
    scale0 = float(lo + hi)
    visibility0 = float(np.clip((hi - lo) / (hi + lo), 0.05, 0.99))
    sigma = np.sqrt(np.maximum(observed[left], 1.0))

    def model(index, scale, visibility):
        idx = index.astype(int)
        return _occupancy(edges, n, scale, visibility)[idx]

    try:
        params, pcov = curve_fit(model, left.astype(float), observed[left].astype(float),
                                 p0=[scale0, visibility0], sigma=sigma, absolute_sigma=True,
                                 bounds=([1e-9, 1e-6], [np.inf, 1.0]), maxfev=20_000)
    except (RuntimeError, ValueError) as e:
        raise FitError(f"아크사인 PDF 피팅 미수렴: {e}",
                       diagnostics={"initial_guess": [scale0, visibility0], "n_left_bins": int(left.size)}) from e

    scale, visibility = float(params[0]), float(params[1])
    std_error = float(np.sqrt(pcov[1, 1])) if np.isfinite(pcov[1, 1]) else math.inf
    warnings: list[str] = []

    def occupancy(s: float, v: float) -> np.ndarray:
        if likelihood == "poisson_least_squares":
            return _poisson_occupancy(edges, peak, n, s, v)
        return _occupancy(edges, n, s, v)

    if likelihood == "poisson_least_squares":
        scale, visibility, std_error, sigma = _fit_poisson_occupancy(
            occupancy, left, observed[left].astype(float), sigma, (scale, visibility))
        warnings.append("likelihood=poisson_least_squares")
    elif likelihood == "poisson_mixture":
        try:
            scale_counts, visibility, std_error, _ = _fit_poisson_mixture(counts, scale * peak, visibility)
            scale = scale_counts / peak
        except Exception as e:
            handle_error("Poisson혼합피팅", e)
        warnings.append("likelihood=poisson_mixture")

    fitted = occupancy(scale, visibility)
    residuals = (observed[left] - fitted[left]) / sigma
    histogram = HistogramData(
        bin_left=(edges[:-1] * peak).tolist(),
        bin_right=(edges[1:] * peak).tolist(),
        count=observed.astype(int).tolist(),
        fit_value=fitted.tolist(),
    )
    diagnostics = FitDiagnostics(
        n_bins_used=n,
        residual_norm=float(np.linalg.norm(residuals)),
        scale_estimate=scale * peak,
        raw_visibility=visibility,
        histogram=histogram,
    )
    logger.debug(f"🔍 PDF 피팅: V={visibility:.5f}±{std_error:.5f}, 왼쪽 빈 {left.size}/{observed.size}")
    return _finalize(visibility, std_error, EstimationMethod.PDF_FIT, diagnostics, warnings)


# ============================================================================
# 디스패처
# ============================================================================

def estimate_visibility(trace: CoincidenceTrace, settings: Optional[EstimationSettings] = None) -> VisibilityEstimate:
    """설정된 방법으로 가시도 추정"""
    settings = settings or EstimationSettings()
    if settings.method is EstimationMethod.MINMAX:
        return estimate_minmax(trace, quantile=settings.quantile,
                               n_resamples=settings.bootstrap_resamples, seed=settings.seed)
    if settings.method is EstimationMethod.FRINGE_FIT:
        return estimate_fringefit(trace, window=settings.window)
    return estimate_pdf_fit(trace, min_bins=settings.min_bins,
                            histogram_min_bins=settings.histogram_min_bins,
                            likelihood=settings.likelihood)
