import math
import logging
from typing import Callable, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.integrate import quad

from core.errors import QuadratureError

# ============================================================================
# 설정 및 초기화
# ============================================================================

logger = logging.getLogger(__name__)

DEFAULT_EPSABS = 1e-10
PHASE_SAMPLES = 4097
MAX_SEGMENTS = 50_000
SEGMENT_LIMIT = 200


class QuadratureResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: float
    error_estimate: float
    n_segments: int


# ============================================================================
# 구간 분할
# ============================================================================

def _phase_cuts(phase: Callable[[np.ndarray], np.ndarray], upper: float) -> np.ndarray:
    """위상 누적 변화량이 π 가 될 때마다 구간 경계 생성"""
    grid = np.linspace(0.0, upper, PHASE_SAMPLES)
    variation = np.concatenate(([0.0], np.cumsum(np.abs(np.diff(phase(grid))))))
    n_half_periods = int(math.floor(variation[-1] / math.pi))
    if n_half_periods > MAX_SEGMENTS:
        raise QuadratureError(
            f"진동이 너무 빠릅니다: 반주기 {n_half_periods}개 > {MAX_SEGMENTS}", error_estimate=math.inf)
    targets = math.pi * np.arange(1, n_half_periods + 1)
    return np.interp(targets, variation, grid)


def _edges(upper: float, cuts: np.ndarray, breakpoints: Sequence[float]) -> np.ndarray:
    inner = [b for b in breakpoints if 0.0 < b < upper]
    return np.unique(np.concatenate(([0.0, upper], cuts, inner)))


def _accumulate(pieces: list[tuple], epsabs: float, label: str) -> QuadratureResult:
    total = math.fsum(p[0] for p in pieces)
    error = math.fsum(p[1] for p in pieces)
    messages = [p[3] for p in pieces if len(p) > 3]
    if error > epsabs:
        raise QuadratureError(f"{label} 적분 미수렴 ({len(messages)}개 구간 경고)", error_estimate=error)
    if messages:
        logger.debug(f"⚠️ {label}: 허용오차 내 경고 {len(messages)}건 ({messages[0]})")
    return QuadratureResult(value=total, error_estimate=error, n_segments=len(pieces))


# ============================================================================
# 진동 적분
# ============================================================================

def integrate_oscillatory(integrand: Callable[[float], float], upper: float,
                          phase: Callable[[np.ndarray], np.ndarray], *,
                          breakpoints: Sequence[float] = (),
                          epsabs: float = DEFAULT_EPSABS) -> QuadratureResult:
    """∫₀^upper integrand dΩ, 위상의 반주기마다 구간을 나눈 적응 구적

    integrand 는 phase(Ω) 로 진동하는 함수. 각 구간에 허용오차를 균등 분배한다.
    """
    if upper <= 0.0:
        return QuadratureResult(value=0.0, error_estimate=0.0, n_segments=0)
    edges = _edges(upper, _phase_cuts(phase, upper), breakpoints)
    per_segment = epsabs / max(len(edges) - 1, 1)
    pieces = [
        quad(integrand, a, b, epsabs=per_segment, epsrel=0.0, limit=SEGMENT_LIMIT, full_output=1)
        for a, b in zip(edges[:-1], edges[1:])
    ]
    return _accumulate(pieces, epsabs, "진동")


def integrate_fourier_cos(envelope: Callable[[float], float], upper: float, frequency: float, *,
                          breakpoints: Sequence[float] = (),
                          epsabs: float = DEFAULT_EPSABS) -> QuadratureResult:
    """∫₀^upper envelope(Ω)·cos(frequency·Ω) dΩ, QUADPACK QAWO 가중 구적"""
    if upper <= 0.0:
        return QuadratureResult(value=0.0, error_estimate=0.0, n_segments=0)
    edges = _edges(upper, np.array([]), breakpoints)
    per_segment = epsabs / max(len(edges) - 1, 1)
    weighting = {"weight": "cos", "wvar": frequency} if frequency != 0.0 else {}
    pieces = [
        quad(envelope, a, b, epsabs=per_segment, epsrel=0.0, limit=SEGMENT_LIMIT, full_output=1, **weighting)
        for a, b in zip(edges[:-1], edges[1:])
    ]
    return _accumulate(pieces, epsabs, "푸리에")
