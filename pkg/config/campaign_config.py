import os
import json
import math
import hashlib
import logging
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError, model_validator

from core.errors import ConfigError, PersistenceError
from core.units import (
    DEFAULT_DEGENERACY_WAVELENGTH,
    DEFAULT_PUMP_WAVELENGTH,
    dispersion_coeff_to_beta2,
    filter_width_to_sigma_omega,
    ps_nm_km_to_si,
)
from tools.drift_simulator import (
    DetectorModel,
    DriftProcess,
    RandomWalk,
    ThermalComponent,
    ThermalSines,
    UniformRandomPhase,
    phase_per_kelvin,
)
from tools.visibility_estimator import EstimationMethod, EstimationSettings, Likelihood

# ============================================================================
# 설정 및 초기화
# ============================================================================

load_dotenv()

logger = logging.getLogger(__name__)

TOOL_VERSION = "1.0.0"
CONFIG_VERSION = "1"

Mode = Literal["simulate", "estimate", "method-a", "method-b", "theory-curves"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ============================================================================
# 설정 섹션
# ============================================================================

class PhysicsSection(_Strict):
    pump_wavelength_m: PositiveFloat = DEFAULT_PUMP_WAVELENGTH
    degeneracy_wavelength_m: PositiveFloat = DEFAULT_DEGENERACY_WAVELENGTH
    sample_length_m: Optional[PositiveFloat] = None
    dispersion_ps_nm_km: Optional[float] = None
    beta2_s2_per_m: Optional[float] = None
    width_convention: Optional[Literal["sigma", "fwhm"]] = None
    filter_width_nm: Optional[PositiveFloat] = None
    filter_widths_nm: Optional[list[PositiveFloat]] = None
    calibration_filter_width_nm: PositiveFloat = 0.01
    target_gamma: Optional[PositiveFloat] = None

    @model_validator(mode="after")
    def _check_dispersion(self) -> "PhysicsSection":
        if self.dispersion_ps_nm_km is not None and self.beta2_s2_per_m is not None:
            raise ValueError("dispersion_ps_nm_km 와 beta2_s2_per_m 중 하나만 지정하세요")
        if abs(self.degeneracy_wavelength_m - 2.0 * self.pump_wavelength_m) > 1e-6 * self.degeneracy_wavelength_m:
            raise ValueError("degeneracy_wavelength_m 은 pump_wavelength_m 의 2배여야 합니다")
        return self

    def beta2(self) -> float:
        """β⁽²⁾ (s²/m), D 가 주어지면 중심 파장에서 변환"""
        if self.beta2_s2_per_m is not None:
            return self.beta2_s2_per_m
        if self.dispersion_ps_nm_km is not None:
            return dispersion_coeff_to_beta2(ps_nm_km_to_si(self.dispersion_ps_nm_km), self.degeneracy_wavelength_m)
        raise ConfigError("dispersion_ps_nm_km 또는 beta2_s2_per_m 이 필요합니다")

    def sigma_omega(self, width_nm: float) -> float:
        if self.width_convention is None:
            raise ConfigError("nm 단위 필터 폭에는 width_convention(sigma|fwhm) 이 필요합니다")
        return filter_width_to_sigma_omega(width_nm, self.degeneracy_wavelength_m, self.width_convention)

    def calibration_sigma_omega(self) -> float:
        return filter_width_to_sigma_omega(self.calibration_filter_width_nm, self.degeneracy_wavelength_m,
                                           self.width_convention or "sigma")

    def operating_sigma_omega(self) -> float:
        """method-a 동작점 σ_ω: target_gamma 가 있으면 γ = 2σ²|β⁽²⁾|L 에서 역산"""
        if self.target_gamma is not None:
            beta2 = abs(self.beta2())
            if beta2 == 0.0:
                raise ConfigError("β⁽²⁾=0 이면 target_gamma 로 대역폭을 정할 수 없습니다")
            return math.sqrt(self.target_gamma / (2.0 * beta2 * self.sample_length_m))
        return self.sigma_omega(self.filter_width_nm)


class DetectorSection(_Strict):
    bin_duration_s: PositiveFloat = 0.1
    max_coincidence_rate_hz: float = Field(default=1e4, ge=0.0)
    accidental_rate_hz: float = Field(default=0.0, ge=0.0)

    def to_model(self, seed: int) -> DetectorModel:
        return DetectorModel(bin_duration=self.bin_duration_s, max_coincidence_rate=self.max_coincidence_rate_hz,
                             accidental_rate=self.accidental_rate_hz, seed=seed)


class DriftSection(_Strict):
    kind: Literal["uniform", "random_walk", "thermal"] = "uniform"
    step_std_rad: float = Field(default=0.1, ge=0.0)
    thermal_amplitude_k: float = Field(default=0.035, ge=0.0)
    thermal_frequencies_hz: list[PositiveFloat] = Field(default_factory=lambda: [0.5, 1.0, 2.0])
    thermal_sensitivity_rad_per_k: Optional[PositiveFloat] = None
    thermal_path_factor: PositiveFloat = 2.0

    def to_process(self, length: Optional[float], wavelength: float) -> DriftProcess:
        if self.kind == "uniform":
            return UniformRandomPhase()
        if self.kind == "random_walk":
            return RandomWalk(step_std=self.step_std_rad)
        sensitivity = self.thermal_sensitivity_rad_per_k
        if sensitivity is None:
            if length is None:
                raise ConfigError("thermal 드리프트에는 sample_length_m 또는 thermal_sensitivity_rad_per_k 가 필요합니다")
            sensitivity = phase_per_kelvin(length, wavelength, path_factor=self.thermal_path_factor)
        n = len(self.thermal_frequencies_hz)
        components = tuple(
            ThermalComponent(amplitude=self.thermal_amplitude_k, frequency=f, phase=2.0 * math.pi * k / n)
            for k, f in enumerate(self.thermal_frequencies_hz)
        )
        return ThermalSines(components=components, sensitivity=sensitivity)


class EstimationSection(_Strict):
    method: EstimationMethod = EstimationMethod.PDF_FIT
    quantile: float = Field(default=0.02, gt=0.0, lt=0.5)
    bootstrap_resamples: int = Field(default=200, ge=2)
    window_bins: Optional[tuple[int, int]] = None
    min_bins: PositiveInt = 100
    histogram_min_bins: int = Field(default=20, ge=2)
    # estimate 모드 / CD 방법 / 캘리브레이션 별 PDF 피팅 우도
    likelihood: Likelihood = "least_squares"
    cd_likelihood: Likelihood = "poisson_least_squares"
    calibration_likelihood: Likelihood = "poisson_mixture"

    def to_settings(self, seed: int, likelihood: Optional[Likelihood] = None) -> EstimationSettings:
        return EstimationSettings(method=self.method, quantile=self.quantile,
                                  bootstrap_resamples=self.bootstrap_resamples, seed=seed,
                                  window=self.window_bins, min_bins=self.min_bins,
                                  histogram_min_bins=self.histogram_min_bins,
                                  likelihood=likelihood or self.likelihood)


class CampaignSection(_Strict):
    bins_per_trace: PositiveInt = 500
    repetitions: PositiveInt = 200
    repetitions_per_bandwidth: Optional[PositiveInt] = None
    calibration_bins: PositiveInt = 500
    calibration_threshold: float = Field(default=0.99, gt=0.0, le=1.0)
    allow_uncalibrated: bool = False
    phi0_rad: float = 0.0

    def bandwidth_repetitions(self) -> int:
        return self.repetitions_per_bandwidth or self.repetitions


class SimulateSection(_Strict):
    visibility: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    n_bins: PositiveInt = 10_000


class EstimateSection(_Strict):
    trace_path: Optional[str] = None


class TheorySection(_Strict):
    shape: Literal["gaussian", "rectangular", "both"] = "gaussian"
    gamma_max: PositiveFloat = 6.0
    n_points: int = Field(default=601, ge=2)


# ============================================================================
# 캠페인 설정
# ============================================================================

class CampaignConfig(_Strict):
    """캠페인 설정 (YAML, version "1")"""
    version: Literal["1"] = CONFIG_VERSION
    mode: Mode
    seed: int = Field(default=0, ge=0, le=(1 << 64) - 1)
    output_dir: str = Field(default_factory=lambda: os.getenv("CDMEAS_OUTPUT_DIR", "outputs"))
    physics: PhysicsSection = Field(default_factory=PhysicsSection)
    detector: DetectorSection = Field(default_factory=DetectorSection)
    drift: DriftSection = Field(default_factory=DriftSection)
    estimation: EstimationSection = Field(default_factory=EstimationSection)
    campaign: CampaignSection = Field(default_factory=CampaignSection)
    simulate: SimulateSection = Field(default_factory=SimulateSection)
    estimate: EstimateSection = Field(default_factory=EstimateSection)
    theory: TheorySection = Field(default_factory=TheorySection)

    @model_validator(mode="after")
    def _check_mode_requirements(self) -> "CampaignConfig":
        physics = self.physics
        if self.mode == "simulate" and self.simulate.visibility is None:
            raise ValueError("simulate 모드에는 simulate.visibility 가 필요합니다")
        if self.mode == "estimate" and not self.estimate.trace_path:
            raise ValueError("estimate 모드에는 estimate.trace_path 가 필요합니다")
        if self.mode in ("method-a", "method-b"):
            if physics.sample_length_m is None:
                raise ValueError(f"{self.mode} 모드에는 physics.sample_length_m 이 필요합니다")
            if physics.dispersion_ps_nm_km is None and physics.beta2_s2_per_m is None:
                raise ValueError(f"{self.mode} 모드에는 dispersion_ps_nm_km 또는 beta2_s2_per_m 이 필요합니다")
            if physics.width_convention is None:
                raise ValueError(f"{self.mode} 모드에는 physics.width_convention(sigma|fwhm) 이 필요합니다")
        if self.mode == "method-a":
            if (physics.filter_width_nm is None) == (physics.target_gamma is None):
                raise ValueError("method-a 모드에는 filter_width_nm 또는 target_gamma 중 하나가 필요합니다")
        if self.mode == "method-b":
            widths = physics.filter_widths_nm or []
            if len(set(widths)) < 3:
                raise ValueError("method-b 모드에는 서로 다른 filter_widths_nm 이 3개 이상 필요합니다")
        return self


# ============================================================================
# 로드 / 저장 / 해시
# ============================================================================

def load_config(path: str | Path) -> CampaignConfig:
    """YAML 파일 → CampaignConfig (엄격 스키마)"""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as e:
        raise PersistenceError(f"설정 파일을 읽을 수 없습니다: {path} ({e})") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"YAML 파싱 실패: {path} ({e})") from e
    return parse_config(raw)


def parse_config(raw: dict[str, Any]) -> CampaignConfig:
    try:
        return CampaignConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"설정 검증 실패:\n{e}") from e


def dump_config(config: CampaignConfig) -> str:
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=True, allow_unicode=True)


def save_config(config: CampaignConfig, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dump_config(config), encoding="utf-8")
    except OSError as e:
        raise PersistenceError(f"설정 저장 실패: {path} ({e})") from e
    return path


def config_hash(config: CampaignConfig) -> str:
    """정렬된 키 JSON 의 SHA-256"""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def with_overrides(config: Optional[CampaignConfig], mode: str, overrides: dict[str, Any]) -> CampaignConfig:
    """점 경로 키("simulate.visibility")로 값 덮어쓰기, None 값은 무시"""
    data = config.model_dump(mode="json") if config is not None else {}
    data["mode"] = mode
    for dotted, value in overrides.items():
        if value is None:
            continue
        target = data
        *parents, leaf = dotted.split(".")
        for key in parents:
            target = target.setdefault(key, {})
        target[leaf] = value
    logger.debug(f"🔍 설정 덮어쓰기: {[k for k, v in overrides.items() if v is not None]}")
    return parse_config(data)
