import math
import logging
from typing import Annotated, Any, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, PositiveFloat, field_validator

from core.errors import DomainError

# ============================================================================
# 설정 및 초기화
# ============================================================================

logger = logging.getLogger(__name__)

THERMO_OPTIC_COEFFICIENT = 4.8e-6   # Δn/n per K
GROUP_INDEX = 1.468
DEFAULT_PATH_FACTOR = 2.0
BANDWIDTH_THRESHOLD = math.pi / 10.0

_MASK64 = (1 << 64) - 1


# ============================================================================
# 위상 드리프트 프로세스
# ============================================================================

class UniformRandomPhase(BaseModel):
    """빈마다 독립적인 φ ~ Uniform[0, 2π)"""
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["uniform"] = "uniform"

    def phases(self, n_bins: int, bin_duration: float, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(0.0, 2.0 * math.pi, size=n_bins)


class RandomWalk(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["random_walk"] = "random_walk"
    step_std: NonNegativeFloat   # rad/√bin

    def phases(self, n_bins: int, bin_duration: float, rng: np.random.Generator) -> np.ndarray:
        steps = rng.normal(0.0, self.step_std, size=n_bins)
        steps[0] = rng.uniform(0.0, 2.0 * math.pi)
        return np.cumsum(steps)


class ThermalComponent(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")
    amplitude: NonNegativeFloat   # K
    frequency: PositiveFloat      # Hz
    phase: float = 0.0            # rad


class ThermalSines(BaseModel):
    """온도 요동 Σ A·sin(2πft + p) 에 감도(rad/K)를 곱한 위상"""
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["thermal"] = "thermal"
    components: tuple[ThermalComponent, ...]
    sensitivity: PositiveFloat   # rad/K

    def phases(self, n_bins: int, bin_duration: float, rng: np.random.Generator) -> np.ndarray:
        t = np.arange(n_bins) * bin_duration
        temperature = np.zeros(n_bins)
        for comp in self.components:
            temperature += comp.amplitude * np.sin(2.0 * math.pi * comp.frequency * t + comp.phase)
        return self.sensitivity * temperature


DriftProcess = Annotated[Union[UniformRandomPhase, RandomWalk, ThermalSines], Field(discriminator="kind")]


class DetectorModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    bin_duration: PositiveFloat = 0.1
    max_coincidence_rate: NonNegativeFloat = 1e4
    accidental_rate: NonNegativeFloat = 0.0
    seed: int = Field(default=0, ge=0, le=_MASK64)

    @property
    def mean_max_counts(self) -> float:
        return self.max_coincidence_rate * self.bin_duration


class CoincidenceTrace(BaseModel):
    """자유 진행 측정의 시간 빈 동시계수"""
    model_config = ConfigDict(frozen=True)

    bin_duration: PositiveFloat
    counts: tuple[int, ...] = Field(min_length=1)
    true_visibility: Optional[float] = None
    metadata: dict[str, Any] = Field(default_factory=dict)

    @field_validator("counts")
    @classmethod
    def _non_negative(cls, counts: tuple[int, ...]) -> tuple[int, ...]:
        if min(counts) < 0:
            raise ValueError("counts 는 음수일 수 없습니다")
        return counts

    @classmethod
    def from_counts(cls, counts, bin_duration: float = 0.1, **kwargs) -> "CoincidenceTrace":
        return cls(bin_duration=bin_duration, counts=tuple(int(c) for c in np.asarray(counts)), **kwargs)

    def counts_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)

    def times(self) -> np.ndarray:
        return np.arange(len(self.counts)) * self.bin_duration

    def __len__(self) -> int:
        return len(self.counts)


class BandwidthCheck(BaseModel):
    model_config = ConfigDict(frozen=True)

    status: Literal["pass", "warn"]
    rad_per_bin: float
    threshold: float


# ============================================================================
# 열 드리프트 모델
# ============================================================================

def fringe_temperature_period(length: float, wavelength: float, *,
                              group_index: float = GROUP_INDEX,
                              thermo_optic: float = THERMO_OPTIC_COEFFICIENT,
                              path_factor: float = DEFAULT_PATH_FACTOR) -> float:
    """한 무늬를 이동시키는 온도 변화 ΔT = λ/(path_factor·L·Δn/K), Δn/K = thermo_optic·n"""
    if not (length > 0.0) or not (wavelength > 0.0):
        raise DomainError(f"length, wavelength 는 양수여야 합니다: {length!r}, {wavelength!r}")
    index_shift_per_kelvin = thermo_optic * group_index
    return wavelength / (path_factor * length * index_shift_per_kelvin)


def phase_per_kelvin(length: float, wavelength: float, **kwargs) -> float:
    """열 감도 (rad/K) = 2π / ΔT_fringe"""
    period = fringe_temperature_period(length, wavelength, **kwargs)
    logger.debug(f"🌡️ 무늬 온도 주기 ΔT={period * 1e3:.1f} mK (L·ΔT={period * length:.3f} K·m)")
    return 2.0 * math.pi / period


# ============================================================================
# 시드 유도 (splitmix64)
# ============================================================================

def derive_seed(seed: int, index: int) -> int:
    """(seed, index) → 64비트 시드, splitmix64 한 단계"""
    z = (seed + (index + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


# ============================================================================
# 트레이스 생성
# ============================================================================

def fringe_probability(phase, visibility: float, phi0: float = 0.0):
    """½(1 + V·cos(φ + φ₀))"""
    result = 0.5 * (1.0 + visibility * np.cos(np.asarray(phase, dtype=float) + phi0))
    return float(result) if np.ndim(result) == 0 else result


def simulate_trace(visibility: float, phi0: float, drift: DriftProcess, detector: DetectorModel,
                   n_bins: int) -> CoincidenceTrace:
    """μ(t) = R_max·T·(1 + V cos(φ(t)+φ₀))/(1+V) + R_acc·T, counts ~ Poisson(μ)"""
    if not (0.0 <= visibility <= 1.0):
        raise DomainError(f"가시도는 [0, 1] 범위여야 합니다: {visibility!r}")
    if n_bins < 1:
        raise DomainError(f"n_bins 는 1 이상이어야 합니다: {n_bins!r}")

    rng = np.random.default_rng(detector.seed)
    phases = drift.phases(n_bins, detector.bin_duration, rng)
    # 최대값이 1 이 되도록 2/(1+V) 로 정규화
    fringe = 2.0 * fringe_probability(phases, visibility, phi0) / (1.0 + visibility)
    mean = detector.mean_max_counts * fringe + detector.accidental_rate * detector.bin_duration
    counts = rng.poisson(mean)

    return CoincidenceTrace(
        bin_duration=detector.bin_duration,
        counts=tuple(int(c) for c in counts),
        true_visibility=visibility,
        metadata={
            "visibility": visibility,
            "phi0": phi0,
            "n_bins": n_bins,
            "drift": drift.model_dump(mode="json"),
            "detector": detector.model_dump(mode="json"),
        },
    )


def drift_bandwidth_check(drift: DriftProcess, detector: DetectorModel,
                          threshold: float = BANDWIDTH_THRESHOLD) -> BandwidthCheck:
    """빈당 최대 위상 변화 max|dφ/dt|·T 가 threshold 를 넘으면 warn

    UniformRandomPhase 는 빈 내부 위상이 고정된 이상화 모델이므로 0 으로 본다.
    """
    if isinstance(drift, RandomWalk):
        rad_per_bin = drift.step_std
    elif isinstance(drift, ThermalSines):
        rad_per_bin = sum(
            comp.amplitude * drift.sensitivity * 2.0 * math.pi * comp.frequency for comp in drift.components
        ) * detector.bin_duration
    else:
        rad_per_bin = 0.0
    status = "warn" if rad_per_bin > threshold else "pass"
    if status == "warn":
        logger.warning(f"⚠️ 위상 드리프트가 검출 대역보다 빠릅니다: {rad_per_bin:.3f} rad/bin > {threshold:.3f}")
    return BandwidthCheck(status=status, rad_per_bin=rad_per_bin, threshold=threshold)
