import math
from typing import NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from core.errors import DomainError
from core.units import (
    DEFAULT_DEGENERACY_WAVELENGTH,
    beta2_to_dispersion_coeff,
    si_to_ps_nm_km,
)

# ============================================================================
# 가우시안 스펙트럼 닫힌 형식
# ============================================================================


class GammaParameter(BaseModel):
    """γ = 2σ²β⁽²⁾L"""
    model_config = ConfigDict(frozen=True)

    value: float
    sigma_omega: float
    beta2: float
    length: float

    @classmethod
    def from_components(cls, sigma_omega: float, beta2: float, length: float) -> "GammaParameter":
        return cls(value=2.0 * sigma_omega**2 * beta2 * length,
                   sigma_omega=sigma_omega, beta2=beta2, length=length)

    @model_validator(mode="after")
    def _check_consistency(self) -> "GammaParameter":
        expected = 2.0 * self.sigma_omega**2 * self.beta2 * self.length
        if not math.isclose(self.value, expected, rel_tol=1e-12):
            raise ValueError(f"γ={self.value} 이(가) 구성요소 값 {expected} 과 불일치")
        return self


class VisibilityInversion(BaseModel):
    """V → |γ| 역변환 결과와 조건수 |dγ/dV|"""
    model_config = ConfigDict(frozen=True)

    gamma: float
    condition_number: float

    def __float__(self) -> float:
        return self.gamma


class DispersionValue(NamedTuple):
    beta2: float
    dispersion_ps_nm_km: float


def visibility_closed_form(gamma):
    """V = (γ² + 1)^(−1/4)"""
    g = np.asarray(gamma, dtype=float)
    result = (g * g + 1.0) ** -0.25
    return float(result) if result.ndim == 0 else result


def phase_closed_form(gamma):
    """ψ_D = ½·atan(γ)"""
    g = np.asarray(gamma, dtype=float)
    result = 0.5 * np.arctan(g)
    return float(result) if result.ndim == 0 else result


def visibility_first_derivative(gamma):
    """dV/dγ = −γ / (2(γ²+1)^(5/4))"""
    g = np.asarray(gamma, dtype=float)
    result = -g / (2.0 * (g * g + 1.0) ** 1.25)
    return float(result) if result.ndim == 0 else result


def visibility_second_derivative(gamma):
    """d²V/dγ² = (3γ² − 2) / (4(γ²+1)^(9/4))"""
    g = np.asarray(gamma, dtype=float)
    result = (3.0 * g * g - 2.0) / (4.0 * (g * g + 1.0) ** 2.25)
    return float(result) if result.ndim == 0 else result


def inflexion_gamma() -> float:
    """감도가 최대인 변곡점 γ = √(2/3)"""
    return math.sqrt(2.0 / 3.0)


def invert_visibility(visibility: float) -> VisibilityInversion:
    """|γ| = √(V⁻⁴ − 1), 0 < V ≤ 1"""
    if not (0.0 < visibility <= 1.0) or not math.isfinite(visibility):
        raise DomainError(f"가시도는 (0, 1] 범위여야 합니다: {visibility!r}")
    gamma_sq = math.expm1(-4.0 * math.log(visibility))
    gamma = math.sqrt(max(gamma_sq, 0.0))
    if gamma == 0.0:
        condition = math.inf
    else:
        condition = 2.0 * visibility**-5 / gamma
    return VisibilityInversion(gamma=gamma, condition_number=condition)


def cd_from_gamma(gamma: float, sigma_omega: float, length: float,
                  center_wavelength: float = DEFAULT_DEGENERACY_WAVELENGTH) -> DispersionValue:
    """|β⁽²⁾| = |γ|/(2σ²L) 와 |D| (ps/(nm·km)); 부호는 가시도로 복원 불가"""
    if not (sigma_omega > 0.0):
        raise DomainError(f"sigma_omega 는 양수여야 합니다: {sigma_omega!r}")
    if not (length > 0.0):
        raise DomainError(f"length 는 양수여야 합니다: {length!r}")
    beta2 = abs(gamma) / (2.0 * sigma_omega**2 * length)
    dispersion = abs(si_to_ps_nm_km(beta2_to_dispersion_coeff(beta2, center_wavelength)))
    return DispersionValue(beta2=beta2, dispersion_ps_nm_km=dispersion)
