import math
from typing import Literal

from scipy.constants import c as SPEED_OF_LIGHT

from core.errors import DomainError

# ============================================================================
# 단위 변환 (내부 표준 단위: SI)
# ============================================================================

# 1 ps/(nm·km) = 1e-12 s / (1e-9 m · 1e3 m) = 1e-6 s/m²
PS_PER_NM_KM = 1e-6
NANOMETER = 1e-9
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

DEFAULT_PUMP_WAVELENGTH = 780.23e-9
DEFAULT_DEGENERACY_WAVELENGTH = 1560.46e-9

WidthConvention = Literal["sigma", "fwhm"]


def _require_positive(name: str, value: float) -> None:
    if not (value > 0.0) or not math.isfinite(value):
        raise DomainError(f"{name} 값은 양수여야 합니다: {value!r}")


def sigma_lambda_to_omega(sigma_lambda: float, center_wavelength: float) -> float:
    """파장 폭(m) → 각주파수 폭(rad/s), 1차 선형화 σ_ω = 2πc·σ_λ/λ₀²"""
    _require_positive("sigma_lambda", sigma_lambda)
    _require_positive("center_wavelength", center_wavelength)
    return 2.0 * math.pi * SPEED_OF_LIGHT * sigma_lambda / center_wavelength**2


def sigma_omega_to_lambda(sigma_omega: float, center_wavelength: float) -> float:
    """각주파수 폭(rad/s) → 파장 폭(m)"""
    _require_positive("sigma_omega", sigma_omega)
    _require_positive("center_wavelength", center_wavelength)
    return sigma_omega * center_wavelength**2 / (2.0 * math.pi * SPEED_OF_LIGHT)


def fwhm_to_sigma(fwhm: float) -> float:
    return fwhm / FWHM_PER_SIGMA


def sigma_to_fwhm(sigma: float) -> float:
    return sigma * FWHM_PER_SIGMA


def filter_width_to_sigma_omega(width_nm: float, center_wavelength: float,
                                convention: WidthConvention) -> float:
    """설정 경계의 필터 폭(nm, σ 또는 FWHM) → 강도 스펙트럼 표준편차 σ_ω"""
    if convention not in ("sigma", "fwhm"):
        raise DomainError(f"알 수 없는 width_convention: {convention!r}")
    sigma_nm = width_nm if convention == "sigma" else fwhm_to_sigma(width_nm)
    return sigma_lambda_to_omega(sigma_nm * NANOMETER, center_wavelength)


def sigma_omega_to_filter_width(sigma_omega: float, center_wavelength: float,
                                convention: WidthConvention) -> float:
    """σ_ω → 필터 폭(nm)"""
    sigma_nm = sigma_omega_to_lambda(sigma_omega, center_wavelength) / NANOMETER
    return sigma_nm if convention == "sigma" else sigma_to_fwhm(sigma_nm)


# ============================================================================
# 색분산 계수 변환 D ↔ β⁽²⁾
# ============================================================================

def ps_nm_km_to_si(dispersion: float) -> float:
    return dispersion * PS_PER_NM_KM


def si_to_ps_nm_km(dispersion: float) -> float:
    return dispersion / PS_PER_NM_KM


def dispersion_coeff_to_beta2(dispersion: float, center_wavelength: float) -> float:
    """D (s/m²) → β⁽²⁾ (s²/m): β⁽²⁾ = −D·λ²/(2πc)"""
    _require_positive("center_wavelength", center_wavelength)
    return -dispersion * center_wavelength**2 / (2.0 * math.pi * SPEED_OF_LIGHT)


def beta2_to_dispersion_coeff(beta2: float, center_wavelength: float) -> float:
    """β⁽²⁾ (s²/m) → D (s/m²): D = −2πc·β⁽²⁾/λ²"""
    _require_positive("center_wavelength", center_wavelength)
    return -2.0 * math.pi * SPEED_OF_LIGHT * beta2 / center_wavelength**2
