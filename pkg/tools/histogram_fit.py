import math
import logging

import numpy as np
from pydantic import BaseModel
from scipy.optimize import curve_fit
from scipy.stats import norm

from core.errors import InsufficientDataError

# ============================================================================
# 설정 및 초기화
# ============================================================================

logger = logging.getLogger(__name__)

MIN_HISTOGRAM_BINS = 10
MIN_SAMPLES_FOR_FIT = 5


class GaussianHistogramFit(BaseModel):
    """표본 히스토그램의 가우시안 피팅 (실패 시 표본 통계로 대체)"""
    mean: float
    std: float
    mean_error: float
    sample_mean: float
    sample_std: float
    n_samples: int
    fit_converged: bool
    bin_edges: list[float]
    counts: list[int]
    fit_values: list[float]


def _binned_gaussian(centers, mu, sigma, n_samples, width):
    return n_samples * width * norm.pdf(centers, loc=mu, scale=abs(sigma))


def fit_gaussian_histogram(samples) -> GaussianHistogramFit:
    """Freedman–Diaconis 히스토그램(최소 10칸)에 N·Δ·𝒩(μ, σ²) 피팅"""
    values = np.asarray(samples, dtype=float)
    values = values[np.isfinite(values)]
    n = values.size
    if n == 0:
        raise InsufficientDataError("히스토그램 피팅에 사용할 표본이 없습니다")
    sample_mean = float(values.mean())
    sample_std = float(values.std(ddof=1)) if n > 1 else 0.0

    if values.min() == values.max():
        edges = np.array([values.min() - 0.5, values.max() + 0.5])
    else:
        edges = np.histogram_bin_edges(values, bins="fd")
        if edges.size - 1 < MIN_HISTOGRAM_BINS:
            edges = np.linspace(values.min(), values.max(), MIN_HISTOGRAM_BINS + 1)
    counts, _ = np.histogram(values, bins=edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    width = float(edges[1] - edges[0])

    mean, std, converged = sample_mean, sample_std, False
    if n >= MIN_SAMPLES_FOR_FIT and sample_std > 0.0:
        try:
            params, _ = curve_fit(
                lambda x, mu, sigma: _binned_gaussian(x, mu, sigma, n, width),
                centers, counts.astype(float), p0=[sample_mean, sample_std],
                sigma=np.sqrt(np.maximum(counts, 1.0)), maxfev=10_000,
            )
            if np.all(np.isfinite(params)) and params[1] != 0.0:
                mean, std, converged = float(params[0]), float(abs(params[1])), True
        except (RuntimeError, ValueError) as e:
            logger.warning(f"⚠️ 히스토그램 가우시안 피팅 실패, 표본 통계 사용: {e}")

    fit_values = _binned_gaussian(centers, mean, std, n, width) if std > 0.0 else np.zeros_like(centers)
    return GaussianHistogramFit(
        mean=mean,
        std=std,
        mean_error=std / math.sqrt(n),
        sample_mean=sample_mean,
        sample_std=sample_std,
        n_samples=n,
        fit_converged=converged,
        bin_edges=edges.tolist(),
        counts=counts.astype(int).tolist(),
        fit_values=np.asarray(fit_values, dtype=float).tolist(),
    )
