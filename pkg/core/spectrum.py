import math
import logging
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, model_validator
from scipy.integrate import quad, trapezoid

from core.errors import InvalidSpectrumError
from core.units import DEFAULT_DEGENERACY_WAVELENGTH, DEFAULT_PUMP_WAVELENGTH

# ============================================================================
# 설정 및 초기화
# ============================================================================

logger = logging.getLogger(__name__)

# 가우시안 적분 영역 절단 (±8σ 바깥 질량 < 1e-12)
GAUSSIAN_TRUNCATION_SIGMAS = 8.0
NORMALIZATION_TOLERANCE = 1e-9


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


# ============================================================================
# 스펙트럼 형태
# ============================================================================

class GaussianShape(_Frozen):
    kind: Literal["gaussian"] = "gaussian"
    sigma_omega: PositiveFloat


class RectangularShape(_Frozen):
    kind: Literal["rectangular"] = "rectangular"
    half_width_omega: PositiveFloat


class TabulatedShape(_Frozen):
    kind: Literal["tabulated"] = "tabulated"
    detuning: tuple[float, ...]
    density: tuple[float, ...]

    @model_validator(mode="after")
    def _check_table(self) -> "TabulatedShape":
        if len(self.detuning) != len(self.density) or len(self.detuning) < 2:
            raise ValueError("detuning/density 길이가 같고 2 이상이어야 합니다")
        grid = np.asarray(self.detuning)
        if not np.all(np.diff(grid) > 0):
            raise ValueError("detuning 은 엄격히 증가해야 합니다")
        values = np.asarray(self.density)
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("density 는 유한한 음이 아닌 값이어야 합니다")
        return self


SpectralShape = Annotated[Union[GaussianShape, RectangularShape, TabulatedShape],
                          Field(discriminator="kind")]


class SpectralDensity(_Frozen):
    """광자쌍 강도 스펙트럼 |Γ(Δω)|² (축퇴점 기준 디튜닝, rad/s)"""
    shape: SpectralShape
    center_wavelength: PositiveFloat = DEFAULT_DEGENERACY_WAVELENGTH
    scale: float = Field(default=1.0, ge=0.0)

    # ------------------------------------------------------------------
    # 생성자
    # ------------------------------------------------------------------

    @classmethod
    def gaussian(cls, sigma_omega: float,
                 center_wavelength: float = DEFAULT_DEGENERACY_WAVELENGTH) -> "SpectralDensity":
        return cls(shape=GaussianShape(sigma_omega=sigma_omega), center_wavelength=center_wavelength)

    @classmethod
    def rectangular(cls, half_width_omega: float,
                    center_wavelength: float = DEFAULT_DEGENERACY_WAVELENGTH) -> "SpectralDensity":
        return cls(shape=RectangularShape(half_width_omega=half_width_omega),
                   center_wavelength=center_wavelength)

    @classmethod
    def tabulated(cls, detuning, density,
                  center_wavelength: float = DEFAULT_DEGENERACY_WAVELENGTH) -> "SpectralDensity":
        """표 형태 입력은 대칭화 후 정규화"""
        raw = cls(shape=TabulatedShape(detuning=tuple(float(x) for x in detuning),
                                       density=tuple(float(y) for y in density)),
                  center_wavelength=center_wavelength)
        return normalize(symmetrize(raw))

    # ------------------------------------------------------------------
    # 평가
    # ------------------------------------------------------------------

    def density(self, detuning):
        """|Γ(Δω)|² 평가 (스칼라/배열)"""
        x = np.asarray(detuning, dtype=float)
        shape = self.shape
        if isinstance(shape, GaussianShape):
            s = shape.sigma_omega
            values = np.exp(-0.5 * (x / s) ** 2) / (s * math.sqrt(2.0 * math.pi))
        elif isinstance(shape, RectangularShape):
            w = shape.half_width_omega
            values = np.where(np.abs(x) <= w, 1.0 / (2.0 * w), 0.0)
        else:
            values = np.interp(x, shape.detuning, shape.density, left=0.0, right=0.0)
        values = self.scale * values
        return float(values) if values.ndim == 0 else values

    def support(self) -> float:
        """적분 상한 (대칭 스펙트럼의 양의 반쪽 영역 [0, support])"""
        shape = self.shape
        if isinstance(shape, GaussianShape):
            return GAUSSIAN_TRUNCATION_SIGMAS * shape.sigma_omega
        if isinstance(shape, RectangularShape):
            return shape.half_width_omega
        return float(np.max(np.abs(shape.detuning)))

    def breakpoints(self) -> np.ndarray:
        """밀도가 매끄럽지 않은 양의 디튜닝 지점"""
        shape = self.shape
        if isinstance(shape, TabulatedShape):
            grid = np.abs(np.asarray(shape.detuning))
            return np.unique(grid[grid > 0.0])
        if isinstance(shape, RectangularShape):
            return np.array([shape.half_width_omega])
        return np.array([])

    def integral(self) -> float:
        """전체 적분값"""
        shape = self.shape
        if isinstance(shape, TabulatedShape):
            # 선형 보간 밀도에 대해 사다리꼴 규칙은 정확
            return self.scale * float(trapezoid(shape.density, shape.detuning))
        return self.scale

    def second_moment(self) -> float:
        """∫ Δω²·|Γ|² dΔω (대칭 가정, 수치 적분)"""
        upper = self.support()
        points = [p for p in self.breakpoints() if 0.0 < p < upper]
        value, _ = quad(lambda w: w * w * self.density(w), 0.0, upper,
                        points=points or None, epsabs=0.0, epsrel=1e-12, limit=500)
        return 2.0 * value

    def is_symmetric(self) -> bool:
        if not isinstance(self.shape, TabulatedShape):
            return True
        grid = np.asarray(self.shape.detuning)
        values = np.asarray(self.shape.density)
        return bool(np.array_equal(grid, -grid[::-1]) and np.array_equal(values, values[::-1]))


# ============================================================================
# 대칭화 / 정규화
# ============================================================================

def symmetrize(spectrum: SpectralDensity) -> SpectralDensity:
    """density(Δω) 와 density(−Δω) 평균 (해석적 형태는 이미 대칭)"""
    shape = spectrum.shape
    if not isinstance(shape, TabulatedShape):
        return spectrum
    grid = np.asarray(shape.detuning)
    values = np.asarray(shape.density)
    sym_grid = np.unique(np.concatenate((grid, -grid)))
    forward = np.interp(sym_grid, grid, values, left=0.0, right=0.0)
    mirrored = np.interp(-sym_grid, grid, values, left=0.0, right=0.0)
    sym_values = (forward + mirrored) / 2.0
    return spectrum.model_copy(update={
        "shape": TabulatedShape(detuning=tuple(sym_grid.tolist()), density=tuple(sym_values.tolist()))
    })


def normalize(spectrum: SpectralDensity) -> SpectralDensity:
    """적분값 1 로 정규화"""
    total = spectrum.integral()
    if not math.isfinite(total) or total <= 0.0:
        raise InvalidSpectrumError(f"정규화 불가능한 스펙트럼 (integral={total!r})")
    shape = spectrum.shape
    if isinstance(shape, TabulatedShape):
        values = np.asarray(shape.density) * spectrum.scale / total
        normalized = spectrum.model_copy(update={
            "shape": TabulatedShape(detuning=shape.detuning, density=tuple(values.tolist())),
            "scale": 1.0,
        })
        residual = abs(normalized.integral() - 1.0)
        if residual > NORMALIZATION_TOLERANCE:
            raise InvalidSpectrumError(f"정규화 오차 초과: {residual:.3e}")
        return normalized
    return spectrum.model_copy(update={"scale": 1.0})


# ============================================================================
# 분산 프로파일 / 간섭계 구성
# ============================================================================

class DispersionProfile(_Frozen):
    """시료 길이 L 과 전파상수 테일러 계수 β⁽ⁿ⁾"""
    length: PositiveFloat
    betas: tuple[float, ...] = Field(min_length=3)

    def beta(self, order: int) -> float:
        return self.betas[order] if order < len(self.betas) else 0.0

    @property
    def beta2(self) -> float:
        return self.betas[2]

    def even_betas_above_two(self) -> tuple[float, ...]:
        """β⁽⁴⁾, β⁽⁶⁾, ... (확장 위상 경로용)"""
        return tuple(self.betas[4::2])

    def odd_betas(self) -> dict[int, float]:
        return {n: b for n, b in enumerate(self.betas) if n % 2 == 1 and b != 0.0}


class InterferometerConfig(_Frozen):
    pump_wavelength: PositiveFloat = DEFAULT_PUMP_WAVELENGTH
    degeneracy_wavelength: PositiveFloat = DEFAULT_DEGENERACY_WAVELENGTH
    sample: DispersionProfile
    static_phase_offset: float = 0.0

    @model_validator(mode="after")
    def _check_energy_conservation(self) -> "InterferometerConfig":
        mismatch = abs(self.degeneracy_wavelength - 2.0 * self.pump_wavelength) / self.degeneracy_wavelength
        if mismatch > 1e-6:
            raise ValueError(f"축퇴 파장은 펌프 파장의 2배여야 합니다 (상대 오차 {mismatch:.2e})")
        return self
