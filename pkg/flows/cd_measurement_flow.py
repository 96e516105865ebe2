import math
import uuid
import logging
import traceback
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy.optimize import curve_fit

from config.campaign_config import TOOL_VERSION, CampaignConfig, config_hash
from config.run_event_logger import RunEventLogger
from core.errors import CalibrationError, ConfigError, DomainError, FitError, handle_error
from core.gaussian_analytics import (
    cd_from_gamma,
    inflexion_gamma,
    invert_visibility,
    visibility_closed_form,
)
from core.interferogram import franson_visibility_phase
from core.spectrum import DispersionProfile, InterferometerConfig, SpectralDensity
from core.units import (
    DEFAULT_DEGENERACY_WAVELENGTH,
    beta2_to_dispersion_coeff,
    dispersion_coeff_to_beta2,
    ps_nm_km_to_si,
    si_to_ps_nm_km,
    sigma_omega_to_lambda,
)
from core.worker import map_in_threads
from tools.drift_simulator import CoincidenceTrace, derive_seed, drift_bandwidth_check, simulate_trace
from tools.histogram_fit import fit_gaussian_histogram
from tools.visibility_estimator import EstimationSettings, VisibilityEstimate, estimate_visibility
from utils.persistence import load_trace, save_trace, write_json, write_manifest
from utils.plot_data import emit_plot_data

# ============================================================================
# 설정 및 초기화
# ============================================================================

logger = logging.getLogger(__name__)

DEFAULT_CALIBRATION_THRESHOLD = 0.99
# 협대역 V ≈ 1 에서 편향이 없는 우도 / 점유수의 Poisson 번짐을 보정한 우도
CALIBRATION_SETTINGS = EstimationSettings(likelihood="poisson_mixture")
CD_SETTINGS = EstimationSettings(likelihood="poisson_least_squares")
OPERATING_VISIBILITY_SLACK = 0.1
CURVE_FIT_TOLERANCE = 1e-14
FIT_CURVE_POINTS = 200

# 시드 스트림 (derive_seed 첫 단계 인덱스)
CALIBRATION_STREAM = 0
INFLEXION_STREAM = 1
MULTIPOINT_STREAM = 2


# ============================================================================
# 데이터 모델 정의
# ============================================================================

class CdMethod(str, Enum):
    INFLEXION_POINT = "inflexion_point"
    MULTI_POINT = "multi_point"


def dispersion_from_beta2(beta2: float, center_wavelength: float) -> float:
    """|β⁽²⁾| → |D| (ps/(nm·km))"""
    return abs(si_to_ps_nm_km(beta2_to_dispersion_coeff(beta2, center_wavelength)))


def beta2_from_dispersion(dispersion: float, center_wavelength: float) -> float:
    """|D| (ps/(nm·km)) → |β⁽²⁾|"""
    return abs(dispersion_coeff_to_beta2(ps_nm_km_to_si(dispersion), center_wavelength))


class CalibrationResult(BaseModel):
    passed: bool
    estimate: VisibilityEstimate
    threshold: float
    overridden: bool = False


class CdResult(BaseModel):
    """CD 측정 결과 (부호 없는 크기)"""
    dispersion_ps_nm_km: float = Field(ge=0.0)
    beta2: float = Field(ge=0.0)
    std_error: float = Field(ge=0.0)
    beta2_std_error: float = Field(ge=0.0)
    method: CdMethod
    samples: List[float] = Field(default_factory=list)
    center_wavelength: float = DEFAULT_DEGENERACY_WAVELENGTH
    fit_details: Dict[str, Any] = Field(default_factory=dict)
    warnings: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_conversion(self) -> "CdResult":
        expected = dispersion_from_beta2(self.beta2, self.center_wavelength)
        if not math.isclose(self.dispersion_ps_nm_km, expected, rel_tol=1e-9, abs_tol=1e-300):
            raise ValueError(f"D={self.dispersion_ps_nm_km} 와 β⁽²⁾={self.beta2} 변환 불일치 (기대 D={expected})")
        return self

    @classmethod
    def from_dispersion(cls, dispersion: float, std_error: float, center_wavelength: float, **kwargs) -> "CdResult":
        beta2 = beta2_from_dispersion(dispersion, center_wavelength)
        return cls(dispersion_ps_nm_km=dispersion_from_beta2(beta2, center_wavelength), beta2=beta2,
                   std_error=std_error, beta2_std_error=beta2_from_dispersion(std_error, center_wavelength),
                   center_wavelength=center_wavelength, **kwargs)

    @classmethod
    def from_beta2(cls, beta2: float, beta2_std_error: float, center_wavelength: float, **kwargs) -> "CdResult":
        beta2 = abs(beta2)
        return cls(dispersion_ps_nm_km=dispersion_from_beta2(beta2, center_wavelength), beta2=beta2,
                   std_error=dispersion_from_beta2(beta2_std_error, center_wavelength),
                   beta2_std_error=abs(beta2_std_error), center_wavelength=center_wavelength, **kwargs)


class VisibilityCurveFit(BaseModel):
    """V(σ) = (γ²+1)^(−1/4), γ = 2σ²β⁽²⁾L 단일 변수 피팅"""
    beta2: float
    beta2_std_error: float
    sigma_omegas: List[float]
    visibilities: List[float]
    fitted_visibilities: List[float]
    residuals: List[float]
    chi_square: float


# ============================================================================
# 캘리브레이션
# ============================================================================

def calibrate(trace: CoincidenceTrace, threshold: float = DEFAULT_CALIBRATION_THRESHOLD,
              settings: Optional[EstimationSettings] = None) -> CalibrationResult:
    """협대역 트레이스 가시도 ≥ threshold 이면 통과"""
    estimate = estimate_visibility(trace, settings or CALIBRATION_SETTINGS)
    passed = estimate.visibility >= threshold
    icon = "✅" if passed else "❌"
    logger.info(f"{icon} 캘리브레이션: V={estimate.visibility:.4f}±{estimate.std_error:.4f} (기준 {threshold})")
    return CalibrationResult(passed=passed, estimate=estimate, threshold=threshold)


def _check_calibration(calibration: Optional[CalibrationResult], allow_uncalibrated: bool,
                       warnings: List[str]) -> Optional[CalibrationResult]:
    if calibration is None:
        logger.warning("⚠️ 캘리브레이션 없이 CD 측정을 진행합니다")
        warnings.append("calibration not performed")
        return None
    if calibration.passed:
        return calibration
    if not allow_uncalibrated:
        raise CalibrationError(
            f"캘리브레이션 미통과: V={calibration.estimate.visibility:.4f} < {calibration.threshold}")
    logger.warning("⚠️ 캘리브레이션 미통과 상태를 무시하고 진행합니다 (allow_uncalibrated)")
    warnings.append("calibration failed, overridden")
    return calibration.model_copy(update={"overridden": True})


async def _estimate_all(traces: Sequence[CoincidenceTrace], settings: Optional[EstimationSettings],
                        max_workers: Optional[int]) -> List[VisibilityEstimate]:
    return await map_in_threads(lambda trace: estimate_visibility(trace, settings), traces, max_workers)


# ============================================================================
# 방법 A: 변곡점
# ============================================================================

async def method_inflexion(traces: Sequence[CoincidenceTrace], sigma_omega: float, length: float, *,
                           settings: Optional[EstimationSettings] = None,
                           calibration: Optional[CalibrationResult] = None,
                           allow_uncalibrated: bool = False,
                           center_wavelength: float = DEFAULT_DEGENERACY_WAVELENGTH,
                           max_workers: Optional[int] = None) -> CdResult:
    """반복마다 V̂ → γ̂ → β⁽²⁾ → D, 히스토그램 가우시안 피팅으로 집계"""
    warnings: List[str] = []
    calibration = _check_calibration(calibration, allow_uncalibrated, warnings)
    if not traces:
        raise ConfigError("method-a 에 사용할 트레이스가 없습니다")

    estimates = await _estimate_all(traces, settings or CD_SETTINGS, max_workers)
    samples: List[float] = []
    gammas: List[float] = []
    excluded: List[int] = []
    for index, estimate in enumerate(estimates):
        if estimate.visibility >= 1.0 or estimate.visibility <= 0.0:
            # 역변환 정의역 끝: γ̂ = 0, D = 0 으로 기록하고 집계에서 제외
            excluded.append(index)
            samples.append(0.0)
            gammas.append(0.0)
            continue
        inversion = invert_visibility(estimate.visibility)
        value = cd_from_gamma(inversion.gamma, sigma_omega, length, center_wavelength)
        samples.append(value.dispersion_ps_nm_km)
        gammas.append(inversion.gamma)

    if excluded:
        warnings.append(f"{len(excluded)} repetition(s) at domain edge excluded")
        logger.warning(f"⚠️ 정의역 끝(V̂ ≥ 1) 반복 {len(excluded)}건 제외")

    visibilities = [e.visibility for e in estimates]
    fit_details: Dict[str, Any] = {
        "sigma_omega": sigma_omega,
        "length": length,
        "n_repetitions": len(traces),
        "n_excluded": len(excluded),
        "excluded": excluded,
        "visibilities": visibilities,
        "visibility_std_errors": [e.std_error for e in estimates],
        "gammas": gammas,
        "calibration": calibration.model_dump(mode="json") if calibration else None,
    }

    excluded_set = set(excluded)
    included = [d for i, d in enumerate(samples) if i not in excluded_set]
    if not included:
        warnings.append("all repetitions excluded, D reported as 0")
        return CdResult.from_dispersion(0.0, 0.0, center_wavelength, method=CdMethod.INFLEXION_POINT,
                                        samples=samples, fit_details=fit_details, warnings=warnings)

    mean_visibility = float(np.mean([v for i, v in enumerate(visibilities) if i not in excluded_set]))
    operating_visibility = visibility_closed_form(inflexion_gamma())
    if abs(mean_visibility - operating_visibility) > OPERATING_VISIBILITY_SLACK:
        warnings.append(f"mean visibility {mean_visibility:.3f} far from inflexion point {operating_visibility:.3f}")

    histogram_fit = fit_gaussian_histogram(included)
    fit_details.update({
        "aggregation": "gaussian_histogram_fit" if histogram_fit.fit_converged else "sample_statistics",
        "gaussian_fit": histogram_fit.model_dump(),
        "sample_mean": histogram_fit.sample_mean,
        "sample_std": histogram_fit.sample_std,
        "distribution_width": histogram_fit.std,
        "mean_error": histogram_fit.mean_error,
        "mean_visibility": mean_visibility,
    })
    logger.info(f"✅ 방법 A: D={histogram_fit.mean:.4f}±{histogram_fit.mean_error:.4f} ps/(nm·km) "
                f"(분포 폭 {histogram_fit.std:.4f}, n={histogram_fit.n_samples})")
    # std_error 는 평균의 표준오차, 반복 분포의 폭은 fit_details.distribution_width
    return CdResult.from_dispersion(abs(histogram_fit.mean), histogram_fit.mean_error, center_wavelength,
                                    method=CdMethod.INFLEXION_POINT, samples=samples,
                                    fit_details=fit_details, warnings=warnings)


# ============================================================================
# 방법 B: 다중 동작점
# ============================================================================

def _curve_model(beta2_scale: float, length: float):
    def model(sigma, q):
        return visibility_closed_form(2.0 * np.asarray(sigma) ** 2 * (q * beta2_scale) * length)
    return model


def _initial_beta2(sigma: np.ndarray, visibilities: np.ndarray, length: float) -> float:
    """점별 역변환의 중앙값, 전부 V=1 이면 γ=1 에 해당하는 척도"""
    guesses = []
    for s, v in zip(sigma, visibilities):
        if 0.0 < v < 1.0:
            guesses.append(invert_visibility(float(v)).gamma / (2.0 * s * s * length))
    if guesses:
        return float(np.median(guesses))
    return 1.0 / (2.0 * float(np.max(sigma)) ** 2 * length)


def fit_visibility_curve(sigma_omegas: Sequence[float], visibilities: Sequence[float],
                         std_errors: Optional[Sequence[float]], length: float) -> VisibilityCurveFit:
    """β⁽²⁾ 하나만 자유 변수인 가중 최소제곱

    std_errors 가 모두 0 이면(잡음 없는 데이터) 비가중. 유한하지 않거나 음수인 오차,
    또는 0 과 양수가 섞인 오차는 가중치를 정할 수 없으므로 FitError.
    """
    sigma = np.asarray(sigma_omegas, dtype=float)
    observed = np.asarray(visibilities, dtype=float)
    if np.unique(sigma).size < 3:
        raise ConfigError(f"서로 다른 대역폭이 3개 이상 필요합니다 (현재 {np.unique(sigma).size}개)")
    if not (length > 0.0):
        raise DomainError(f"length 는 양수여야 합니다: {length!r}")

    weights = None
    if std_errors is not None:
        errors = np.asarray(std_errors, dtype=float)
        if not np.all(np.isfinite(errors)) or np.any(errors < 0.0):
            raise FitError("가시도 표준오차가 유한하지 않습니다", diagnostics={"std_errors": errors.tolist()})
        if np.all(errors > 0.0):
            weights = errors
        elif np.any(errors > 0.0):
            raise FitError("0 인 가시도 표준오차가 섞여 있습니다", diagnostics={"std_errors": errors.tolist()})

    scale = _initial_beta2(sigma, observed, length)
    model = _curve_model(scale, length)
    try:
        params, pcov = curve_fit(model, sigma, observed, p0=[1.0], sigma=weights,
                                 absolute_sigma=weights is not None,
                                 xtol=CURVE_FIT_TOLERANCE, ftol=CURVE_FIT_TOLERANCE, gtol=CURVE_FIT_TOLERANCE,
                                 maxfev=10_000)
    except (RuntimeError, ValueError) as e:
        raise FitError(f"가시도 곡선 피팅 미수렴: {e}",
                       diagnostics={"sigma_omegas": sigma.tolist(), "visibilities": observed.tolist()}) from e

    q = float(params[0])
    q_error = float(np.sqrt(pcov[0, 0])) if np.isfinite(pcov[0, 0]) else math.inf
    fitted = np.asarray(model(sigma, q), dtype=float)
    residuals = observed - fitted
    normalized = residuals / weights if weights is not None else residuals
    return VisibilityCurveFit(
        beta2=abs(q * scale),
        beta2_std_error=abs(q_error * scale),
        sigma_omegas=sigma.tolist(),
        visibilities=observed.tolist(),
        fitted_visibilities=fitted.tolist(),
        residuals=residuals.tolist(),
        chi_square=float(np.sum(normalized ** 2)),
    )


async def method_multipoint(points: Sequence[tuple[float, Sequence[CoincidenceTrace]]], length: float, *,
                            settings: Optional[EstimationSettings] = None,
                            calibration: Optional[CalibrationResult] = None,
                            allow_uncalibrated: bool = False,
                            center_wavelength: float = DEFAULT_DEGENERACY_WAVELENGTH,
                            max_workers: Optional[int] = None) -> CdResult:
    """대역폭별 평균 V̂ 에 V(σ) 곡선 피팅, 반복 인덱스별 피팅으로 D 표본 생성"""
    warnings: List[str] = []
    sigmas = [float(s) for s, _ in points]
    if len(set(sigmas)) < 3:
        raise ConfigError(f"method-b 에는 서로 다른 대역폭이 3개 이상 필요합니다 (현재 {len(set(sigmas))}개)")
    calibration = _check_calibration(calibration, allow_uncalibrated, warnings)

    flat = [trace for _, traces in points for trace in traces]
    flat_estimates = await _estimate_all(flat, settings or CD_SETTINGS, max_workers)
    per_point: List[List[VisibilityEstimate]] = []
    offset = 0
    for _, traces in points:
        per_point.append(flat_estimates[offset:offset + len(traces)])
        offset += len(traces)
    if any(not estimates for estimates in per_point):
        raise ConfigError("모든 대역폭에 트레이스가 1개 이상 필요합니다")

    means, sems, spreads = [], [], []
    for estimates in per_point:
        values = np.array([e.visibility for e in estimates])
        means.append(float(values.mean()))
        if values.size > 1:
            spreads.append(float(values.std(ddof=1)))
            sems.append(spreads[-1] / math.sqrt(values.size))
        else:
            spreads.append(estimates[0].std_error)
            sems.append(estimates[0].std_error)

    curve_errors: Optional[List[float]] = sems
    if any(s == 0.0 for s in sems) and any(s > 0.0 for s in sems):
        logger.warning("⚠️ 표준오차가 0 인 대역폭이 있어 평균 곡선을 비가중으로 피팅합니다")
        warnings.append("visibility curve fitted unweighted (zero sem)")
        curve_errors = None
    curve = fit_visibility_curve(sigmas, means, curve_errors, length)

    # 반복 인덱스 r 마다 대역폭별 r 번째 V̂ 로 단일 변수 피팅, 오차가 유효하지 않은 반복은 건너뜀
    n_repetitions = min(len(estimates) for estimates in per_point)
    samples: List[float] = []
    failed = 0
    for r in range(n_repetitions):
        try:
            rep_fit = fit_visibility_curve(sigmas, [estimates[r].visibility for estimates in per_point],
                                           [estimates[r].std_error for estimates in per_point], length)
            samples.append(dispersion_from_beta2(rep_fit.beta2, center_wavelength))
        except FitError as e:
            logger.warning(f"⚠️ 반복 {r} 피팅 건너뜀: {e}")
            samples.append(math.nan)
            failed += 1
    if failed:
        warnings.append(f"{failed} per-repetition fit(s) skipped")

    residuals = np.asarray(curve.residuals)
    residual_std = float(residuals.std(ddof=1)) if residuals.size > 1 else 0.0
    table = []
    for s, estimates, mean, sem, spread, fitted in zip(sigmas, per_point, means, sems, spreads,
                                                      curve.fitted_visibilities):
        table.append({
            "sigma_omega": s,
            "sigma_lambda_nm": sigma_omega_to_lambda(s, center_wavelength) * 1e9,
            "visibility": mean,
            "sem": sem,
            "visibility_std": spread,
            "fit_visibility": fitted,
            "n_traces": len(estimates),
        })
    grid = np.linspace(min(sigmas), max(sigmas), FIT_CURVE_POINTS)
    fit_curve = _curve_model(curve.beta2, length)(grid, 1.0)
    finite_samples = [d for d in samples if math.isfinite(d)]

    fit_details: Dict[str, Any] = {
        "length": length,
        "table": table,
        "fit_curve": {"sigma_omega": grid.tolist(), "visibility": np.asarray(fit_curve).tolist()},
        "residuals": curve.residuals,
        "residual_mean_over_std": float(abs(residuals.mean()) / residual_std) if residual_std > 0 else 0.0,
        "chi_square": curve.chi_square,
        "sem_spread_ratio": float(max(sems) / min(sems)) if min(sems) > 0 else math.inf,
        "sample_mean": float(np.mean(finite_samples)) if finite_samples else math.nan,
        "sample_std": float(np.std(finite_samples, ddof=1)) if len(finite_samples) > 1 else 0.0,
        "calibration": calibration.model_dump(mode="json") if calibration else None,
    }
    result = CdResult.from_beta2(curve.beta2, curve.beta2_std_error, center_wavelength,
                                 method=CdMethod.MULTI_POINT, samples=samples,
                                 fit_details=fit_details, warnings=warnings)
    logger.info(f"✅ 방법 B: D={result.dispersion_ps_nm_km:.4f}±{result.std_error:.4f} ps/(nm·km) "
                f"({len(sigmas)}개 대역폭, 반복 {n_repetitions})")
    return result


# ============================================================================
# 이론 곡선
# ============================================================================

THEORY_SIGMA_OMEGA = 1e12


def theory_curves(shape: str, gamma_max: float, n_points: int) -> Dict[str, tuple[List[float], List[float]]]:
    """γ 에 대한 V 곡선. 사각 스펙트럼은 같은 2차 모멘트(σ = W/√3)로 γ 를 정의"""
    gammas = np.linspace(0.0, gamma_max, n_points)
    curves: Dict[str, tuple[List[float], List[float]]] = {}
    if shape in ("gaussian", "both"):
        curves["gaussian"] = (gammas.tolist(), np.asarray(visibility_closed_form(gammas)).tolist())
    if shape in ("rectangular", "both"):
        spectrum = SpectralDensity.rectangular(math.sqrt(3.0) * THEORY_SIGMA_OMEGA)
        values = []
        for gamma in gammas:
            beta2_length = gamma / (2.0 * THEORY_SIGMA_OMEGA ** 2)
            values.append(franson_visibility_phase(spectrum, beta2_length, 1.0).visibility)
        curves["rectangular"] = (gammas.tolist(), values)
    inflexion = inflexion_gamma()
    if inflexion <= gamma_max:
        curves["inflexion"] = ([inflexion], [visibility_closed_form(inflexion)])
    return curves


# ============================================================================
# 메인 플로우 클래스
# ============================================================================

class CdMeasurementState(BaseModel):
    run_id: str = Field(default_factory=lambda: str(uuid.uuid4()))
    mode: str = ""
    calibration: Optional[CalibrationResult] = None
    estimate: Optional[VisibilityEstimate] = None
    result: Optional[CdResult] = None
    theory: Dict[str, Any] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)


class CdMeasurementFlow:
    """캠페인 설정 하나를 실행하는 플로우: 시뮬레이션 → 캘리브레이션 → 측정 → 출력"""

    def __init__(self, config: CampaignConfig, event_logger: Optional[RunEventLogger] = None,
                 max_workers: Optional[int] = None):
        self.config = config
        self.event_logger = event_logger or RunEventLogger(None)
        self.max_workers = max_workers
        self.state = CdMeasurementState(mode=config.mode)
        self.output_dir = Path(config.output_dir)

    def _handle_error(self, stage: str, error: Exception) -> None:
        """통합 에러 처리: 이벤트 기록 후 재발생"""
        logger.error(f"❌ [{stage}] 오류 발생: {error}")
        logger.debug(f"상세 정보: {traceback.format_exc()}")
        self.event_logger.emit_event("flow_failed", {"stage": stage, "error": str(error),
                                                     "error_type": type(error).__name__})
        handle_error(stage, error)

    def _record(self, paths) -> None:
        self.state.outputs.extend(str(p) for p in paths)

    # ============================================================================
    # 트레이스 생성
    # ============================================================================

    def interferometer(self) -> InterferometerConfig:
        """method-a/b 의 간섭계: 시료 β⁽²⁾·L 과 고정 위상 φ₀"""
        physics = self.config.physics
        if physics.sample_length_m is None:
            raise ConfigError("간섭계 구성에는 physics.sample_length_m 이 필요합니다")
        return InterferometerConfig(
            pump_wavelength=physics.pump_wavelength_m,
            degeneracy_wavelength=physics.degeneracy_wavelength_m,
            sample=DispersionProfile(length=physics.sample_length_m, betas=(0.0, 0.0, physics.beta2())),
            static_phase_offset=self.config.campaign.phi0_rad,
        )

    def _simulate_one(self, visibility: float, n_bins: int, seed: int, phi0: float) -> CoincidenceTrace:
        physics = self.config.physics
        drift = self.config.drift.to_process(physics.sample_length_m, physics.degeneracy_wavelength_m)
        detector = self.config.detector.to_model(seed)
        return simulate_trace(visibility, phi0, drift, detector, n_bins)

    async def simulate_traces(self, visibility: float, count: int, n_bins: int, stream: int) -> List[CoincidenceTrace]:
        """(seed, stream, index) 에서 유도한 시드로 트레이스 배치 생성, φ₀ 는 간섭계 고정 위상"""
        phi0 = self.interferometer().static_phase_offset
        stream_seed = derive_seed(self.config.seed, stream)
        seeds = [derive_seed(stream_seed, index) for index in range(count)]
        traces = await map_in_threads(lambda s: self._simulate_one(visibility, n_bins, s, phi0), seeds,
                                      self.max_workers)
        self.event_logger.emit_event("traces_simulated", {"visibility": visibility, "count": count,
                                                          "n_bins": n_bins, "stream": stream})
        return traces

    def _true_visibility(self, sigma_omega: float) -> float:
        interferometer = self.interferometer()
        spectrum = SpectralDensity.gaussian(sigma_omega, interferometer.degeneracy_wavelength)
        return franson_visibility_phase(spectrum, interferometer.sample.beta2, interferometer.sample.length).visibility

    def _cd_settings(self) -> EstimationSettings:
        estimation = self.config.estimation
        return estimation.to_settings(self.config.seed, estimation.cd_likelihood)

    def _check_drift_bandwidth(self) -> None:
        physics = self.config.physics
        drift = self.config.drift.to_process(physics.sample_length_m, physics.degeneracy_wavelength_m)
        check = drift_bandwidth_check(drift, self.config.detector.to_model(self.config.seed))
        self.event_logger.emit_event("drift_bandwidth_check", check.model_dump())

    # ============================================================================
    # 1. 캘리브레이션
    # ============================================================================

    async def run_calibration(self) -> CalibrationResult:
        campaign = self.config.campaign
        sigma = self.config.physics.calibration_sigma_omega()
        visibility = self._true_visibility(sigma)
        trace = (await self.simulate_traces(visibility, 1, campaign.calibration_bins, CALIBRATION_STREAM))[0]
        estimation = self.config.estimation
        calibration = calibrate(trace, campaign.calibration_threshold,
                                estimation.to_settings(self.config.seed, estimation.calibration_likelihood))
        self.state.calibration = calibration
        self.event_logger.emit_event("calibration_completed", {
            "passed": calibration.passed, "visibility": calibration.estimate.visibility,
            "threshold": calibration.threshold, "true_visibility": visibility,
        })
        return calibration

    # ============================================================================
    # 2. 모드별 단계
    # ============================================================================

    async def run_simulate(self) -> None:
        # simulate 모드는 시료 물리량 없이 φ₀ 만 사용
        trace = self._simulate_one(self.config.simulate.visibility, self.config.simulate.n_bins, self.config.seed,
                                   self.config.campaign.phi0_rad)
        self._record(save_trace(trace, self.output_dir / "trace.csv"))
        self._record(emit_plot_data("fringe-trace", trace, self.output_dir))
        self.event_logger.emit_event("trace_written", {"n_bins": len(trace), "visibility": trace.true_visibility})

    async def run_estimate(self) -> None:
        trace = load_trace(self.config.estimate.trace_path)
        estimate = estimate_visibility(trace, self.config.estimation.to_settings(self.config.seed))
        self.state.estimate = estimate
        report = estimate.to_report()
        report["true_visibility"] = trace.true_visibility
        report["raw_visibility"] = estimate.fit_diagnostics.raw_visibility
        report["residual_norm"] = estimate.fit_diagnostics.residual_norm
        self._record([write_json(self.output_dir / "estimate.json", report)])
        if estimate.fit_diagnostics.histogram is not None:
            self._record(emit_plot_data("count-histogram", estimate.fit_diagnostics.histogram, self.output_dir))
        self.event_logger.emit_event("visibility_estimated", report)

    async def run_method_a(self) -> CdResult:
        physics, campaign = self.config.physics, self.config.campaign
        self._check_drift_bandwidth()
        calibration = await self.run_calibration()
        sigma = physics.operating_sigma_omega()
        visibility = self._true_visibility(sigma)
        traces = await self.simulate_traces(visibility, campaign.repetitions, campaign.bins_per_trace,
                                            INFLEXION_STREAM)
        result = await method_inflexion(
            traces, sigma, physics.sample_length_m,
            settings=self._cd_settings(),
            calibration=calibration, allow_uncalibrated=campaign.allow_uncalibrated,
            center_wavelength=physics.degeneracy_wavelength_m, max_workers=self.max_workers)
        result.fit_details["true_visibility"] = visibility
        result.fit_details["true_dispersion_ps_nm_km"] = dispersion_from_beta2(physics.beta2(),
                                                                                physics.degeneracy_wavelength_m)
        self.state.result = result
        excluded = set(result.fit_details.get("excluded", []))
        included = [d for i, d in enumerate(result.samples) if i not in excluded]
        if included:
            self._record(emit_plot_data("cd-histogram", included, self.output_dir))
        return result

    async def run_method_b(self) -> CdResult:
        physics, campaign = self.config.physics, self.config.campaign
        self._check_drift_bandwidth()
        calibration = await self.run_calibration()
        points = []
        true_visibilities = []
        for index, width in enumerate(physics.filter_widths_nm):
            sigma = physics.sigma_omega(width)
            visibility = self._true_visibility(sigma)
            true_visibilities.append(visibility)
            traces = await self.simulate_traces(visibility, campaign.bandwidth_repetitions(),
                                                campaign.bins_per_trace, MULTIPOINT_STREAM + index)
            points.append((sigma, traces))
        result = await method_multipoint(
            points, physics.sample_length_m,
            settings=self._cd_settings(),
            calibration=calibration, allow_uncalibrated=campaign.allow_uncalibrated,
            center_wavelength=physics.degeneracy_wavelength_m, max_workers=self.max_workers)
        result.fit_details["true_visibilities"] = true_visibilities
        result.fit_details["true_dispersion_ps_nm_km"] = dispersion_from_beta2(physics.beta2(),
                                                                                physics.degeneracy_wavelength_m)
        self.state.result = result

        table = result.fit_details["table"]
        self._record(emit_plot_data("visibility-vs-bandwidth", {
            "measured": ([row["sigma_lambda_nm"] for row in table], [row["visibility"] for row in table]),
            "fit": ([sigma_omega_to_lambda(s, physics.degeneracy_wavelength_m) * 1e9
                     for s in result.fit_details["fit_curve"]["sigma_omega"]],
                    result.fit_details["fit_curve"]["visibility"]),
        }, self.output_dir))
        finite = [d for d in result.samples if math.isfinite(d)]
        if len(finite) > 1:
            self._record(emit_plot_data("cd-histogram", finite, self.output_dir))
        return result

    async def run_theory(self) -> Dict[str, Any]:
        theory = self.config.theory
        curves = theory_curves(theory.shape, theory.gamma_max, theory.n_points)
        self.state.theory = {name: {"x": x, "y": y} for name, (x, y) in curves.items()}
        self._record(emit_plot_data("gamma-curve", curves, self.output_dir))
        return self.state.theory

    # ============================================================================
    # 3. 실행
    # ============================================================================

    def _write_results(self) -> None:
        if self.state.result is None:
            return
        payload = {
            "schema": 1,
            "tool_version": TOOL_VERSION,
            "mode": self.config.mode,
            "seed": self.config.seed,
            "result": self.state.result.model_dump(mode="json"),
            "calibration": self.state.calibration.model_dump(mode="json") if self.state.calibration else None,
        }
        self._record([write_json(self.output_dir / "results.json", payload)])

    async def kickoff_async(self) -> CdMeasurementState:
        """모드별 단계 실행 후 결과와 매니페스트 저장"""
        mode = self.config.mode
        steps = {
            "simulate": self.run_simulate,
            "estimate": self.run_estimate,
            "method-a": self.run_method_a,
            "method-b": self.run_method_b,
            "theory-curves": self.run_theory,
        }
        self.event_logger.emit_event("flow_started", {"mode": mode, "seed": self.config.seed,
                                                      "config_hash": config_hash(self.config)})
        try:
            await steps[mode]()
            self._write_results()
            manifest = write_manifest(self.output_dir, tool_version=TOOL_VERSION,
                                      config_hash=config_hash(self.config), seed=self.config.seed,
                                      mode=mode, outputs=self.state.outputs)
            self.state.outputs.append(str(manifest))
        except Exception as e:
            self._handle_error(f"{mode} 실행", e)
        self.event_logger.emit_event("flow_completed", {"mode": mode, "n_outputs": len(self.state.outputs)})
        logger.info(f"🚀 [{mode}] 완료: 출력 {len(self.state.outputs)}개")
        return self.state
