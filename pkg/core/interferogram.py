import math
import logging
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from core.errors import handle_error
from core.spectrum import DispersionProfile, SpectralDensity, normalize, symmetrize
from tools.quadrature import DEFAULT_EPSABS, integrate_fourier_cos, integrate_oscillatory

# ============================================================================
# 설정 및 초기화
# ============================================================================

logger = logging.getLogger(__name__)

# Cauchy–Schwarz 상한을 넘는 반올림 오차 허용폭
VISIBILITY_ROUNDOFF = 1e-9


def wrap_phase(phase: float) -> float:
    """위상을 (−π, π] 로 축약"""
    wrapped = math.remainder(phase, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


# ============================================================================
# 데이터 모델
# ============================================================================

class VisibilityPhase(BaseModel):
    """Franson 진동의 (V_D, ψ_D)"""
    model_config = ConfigDict(frozen=True)

    visibility: float = Field(ge=0.0, le=1.0)
    phase: float

    @field_validator("phase")
    @classmethod
    def _phase_range(cls, value: float) -> float:
        if not (-math.pi < value <= math.pi):
            raise ValueError(f"phase 는 (−π, π] 범위여야 합니다: {value}")
        return value


class InterferogramDecomposition(BaseModel):
    """동시계수 간섭무늬의 세 항: 상수, Franson, HOM"""
    model_config = ConfigDict(frozen=True)

    constant_term: float = 0.5
    franson_term: VisibilityPhase
    hom_term: float
    static_phase: float = 0.0

    def coincidence_probability(self, extra_phase: float = 0.0) -> float:
        """P_c = ½ − F/4 − H/4, F = V_D·cos(2β⁽⁰⁾L + ψ_D + extra)"""
        franson = self.franson_term.visibility * math.cos(
            self.static_phase + self.franson_term.phase + extra_phase)
        return self.constant_term - 0.25 * franson - 0.25 * self.hom_term


# ============================================================================
# N00N 위상
# ============================================================================

def noon_phase(profile: DispersionProfile, detuning):
    """φ_N00N = L·(2β⁽⁰⁾ + Σ_k 2β⁽²ᵏ⁾Δω²ᵏ/(2k)!), 홀수 차수는 상쇄"""
    w = np.asarray(detuning, dtype=float)
    total = 2.0 * profile.beta(0) * np.ones_like(w)
    for order in range(2, len(profile.betas), 2):
        total = total + 2.0 * profile.betas[order] * w**order / math.factorial(order)
    result = profile.length * total
    return float(result) if result.ndim == 0 else result


def _even_phase(beta2: float, length: float, extended_betas: Sequence[float]):
    """Ψ(Ω)+Ψ(−Ω) 에서 β⁽⁰⁾ 를 뺀 부분"""
    def phase(w):
        total = beta2 * length * w**2
        for k, beta in enumerate(extended_betas, start=2):
            total = total + 2.0 * beta * length * w ** (2 * k) / math.factorial(2 * k)
        return total
    return phase


def _odd_phase(odd_betas: dict[int, float], length: float):
    """Ψ(Ω)−Ψ(−Ω) = 2·Σ_odd β⁽ⁿ⁾LΩⁿ/n!"""
    def phase(w):
        total = 0.0 * w
        for order, beta in odd_betas.items():
            total = total + 2.0 * beta * length * w**order / math.factorial(order)
        return total
    return phase


# ============================================================================
# Franson 가시도 / 위상
# ============================================================================

def franson_visibility_phase(spectrum: SpectralDensity, beta2: float, length: float, *,
                             extended_betas: Sequence[float] = (),
                             epsabs: float = DEFAULT_EPSABS) -> VisibilityPhase:
    """V = √(C² + S²), ψ = atan2(S, C)

    C, S 는 |Γ|²·cos/sin(β⁽²⁾Δω²L) 의 적분. extended_betas 는 β⁽⁴⁾, β⁽⁶⁾, ...
    """
    try:
        spectrum = normalize(symmetrize(spectrum))
        if beta2 == 0.0 and not any(extended_betas):
            return VisibilityPhase(visibility=1.0, phase=0.0)

        phase = _even_phase(beta2, length, extended_betas)
        upper = spectrum.support()
        breakpoints = spectrum.breakpoints()
        # 대칭 스펙트럼: 전체 적분 = 2 × 양의 반쪽
        cos_part = integrate_oscillatory(
            lambda w: spectrum.density(w) * math.cos(phase(w)), upper, phase,
            breakpoints=breakpoints, epsabs=epsabs / 2.0)
        sin_part = integrate_oscillatory(
            lambda w: spectrum.density(w) * math.sin(phase(w)), upper, phase,
            breakpoints=breakpoints, epsabs=epsabs / 2.0)
        c_value = 2.0 * cos_part.value
        s_value = 2.0 * sin_part.value

        visibility = math.hypot(c_value, s_value)
        if 1.0 < visibility <= 1.0 + VISIBILITY_ROUNDOFF:
            visibility = 1.0
        return VisibilityPhase(visibility=visibility, phase=wrap_phase(math.atan2(s_value, c_value)))
    except Exception as e:
        handle_error("Franson가시도", e)


# ============================================================================
# 동시계수 간섭무늬 분해
# ============================================================================

def hom_autocorrelation(spectrum: SpectralDensity, profile: DispersionProfile, *,
                        epsabs: float = DEFAULT_EPSABS) -> float:
    """∫|Γ(Ω)|²·cos(Ψ(Ω)−Ψ(−Ω)) dΩ"""
    odd_betas = profile.odd_betas()
    upper = spectrum.support()
    breakpoints = spectrum.breakpoints()
    if not odd_betas:
        return 1.0
    if set(odd_betas) == {1}:
        # 선형 위상: 푸리에 가중 구적
        delay = 2.0 * odd_betas[1] * profile.length
        result = integrate_fourier_cos(spectrum.density, upper, delay,
                                       breakpoints=breakpoints, epsabs=epsabs / 2.0)
    else:
        phase = _odd_phase(odd_betas, profile.length)
        result = integrate_oscillatory(
            lambda w: spectrum.density(w) * math.cos(phase(w)), upper, phase,
            breakpoints=breakpoints, epsabs=epsabs / 2.0)
    return 2.0 * result.value


def coincidence_interferogram(spectrum: SpectralDensity, profile: DispersionProfile, *,
                              extended_phase: bool = False,
                              epsabs: float = DEFAULT_EPSABS) -> InterferogramDecomposition:
    """상수항 ½, Franson 항 (짝수 위상), HOM 항 (홀수 위상) 분해"""
    try:
        spectrum = normalize(symmetrize(spectrum))
        extended = profile.even_betas_above_two() if extended_phase else ()
        franson = franson_visibility_phase(spectrum, profile.beta2, profile.length,
                                           extended_betas=extended, epsabs=epsabs)
        hom = hom_autocorrelation(spectrum, profile, epsabs=epsabs)
        logger.debug(f"🔍 간섭무늬 분해: V_D={franson.visibility:.6f}, HOM={hom:.3e}")
        return InterferogramDecomposition(
            franson_term=franson,
            hom_term=min(hom, 1.0),
            static_phase=2.0 * profile.beta(0) * profile.length,
        )
    except Exception as e:
        handle_error("간섭무늬분해", e)
