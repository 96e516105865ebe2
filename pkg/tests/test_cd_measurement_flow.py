import json
import math

import numpy as np
import pytest
from pydantic import ValidationError

from config.campaign_config import parse_config
from config.run_event_logger import RunEventLogger
from core.errors import CalibrationError, ConfigError, FitError
from core.gaussian_analytics import inflexion_gamma, visibility_closed_form
from flows import cd_measurement_flow as cd_flow
from flows.cd_measurement_flow import (
    CdMeasurementFlow,
    CdMethod,
    CdResult,
    beta2_from_dispersion,
    calibrate,
    fit_visibility_curve,
    method_inflexion,
    method_multipoint,
    theory_curves,
)
from tools.drift_simulator import CoincidenceTrace, DetectorModel, UniformRandomPhase, derive_seed, simulate_trace
from tools.visibility_estimator import EstimationMethod, EstimationSettings

WAVELENGTH = 1560.46e-9
LENGTH = 2.4
BETA2 = beta2_from_dispersion(17.0, WAVELENGTH)


def _sigma_for_gamma(gamma: float, length: float = LENGTH) -> float:
    return math.sqrt(gamma / (2.0 * BETA2 * length))


def _traces(make, visibility: float, count: int, n_bins: int = 4000):
    return [CoincidenceTrace.from_counts(make(visibility, n_bins=n_bins, phi0=0.37 * k)) for k in range(count)]


# ============================================================================
# 결과 모델
# ============================================================================

def test_cd_result_conversions_consistent():
    result = CdResult.from_dispersion(17.0, 0.5, WAVELENGTH, method=CdMethod.INFLEXION_POINT)
    assert result.beta2 == pytest.approx(BETA2, rel=1e-12)
    again = CdResult.from_beta2(-result.beta2, result.beta2_std_error, WAVELENGTH, method=CdMethod.MULTI_POINT)
    assert again.dispersion_ps_nm_km == pytest.approx(17.0, rel=1e-12)
    assert again.std_error == pytest.approx(0.5, rel=1e-12)


def test_cd_result_rejects_inconsistent_units():
    with pytest.raises(ValidationError):
        CdResult(dispersion_ps_nm_km=17.0, beta2=1e-26, std_error=0.0, beta2_std_error=0.0,
                 method=CdMethod.INFLEXION_POINT)


# ============================================================================
# 캘리브레이션
# ============================================================================

def test_calibrate_pass_and_fail():
    high = simulate_trace(1.0, 0.0, UniformRandomPhase(), DetectorModel(seed=3), 2000)
    low = simulate_trace(0.9, 0.0, UniformRandomPhase(), DetectorModel(seed=3), 2000)
    assert calibrate(high).passed
    result = calibrate(low)
    assert not result.passed
    assert result.threshold == 0.99


@pytest.mark.parametrize("n_bins", [500, 2000])
def test_calibrate_passes_full_visibility_for_every_seed(n_bins):
    """V = 1.0 협대역 트레이스는 시드와 무관하게 기본 기준 0.99 통과"""
    for index in range(20):
        trace = simulate_trace(1.0, 0.0, UniformRandomPhase(), DetectorModel(seed=derive_seed(n_bins, index)), n_bins)
        result = calibrate(trace)
        assert result.passed, f"seed index {index}: V={result.estimate.visibility:.4f}"
        assert "likelihood=poisson_mixture" in result.estimate.warnings


async def test_failed_calibration_blocks_measurement(noiseless_fringe_counts):
    calibration = calibrate(simulate_trace(0.9, 0.0, UniformRandomPhase(), DetectorModel(seed=5), 2000))
    traces = _traces(noiseless_fringe_counts, 0.88, 2)
    with pytest.raises(CalibrationError):
        await method_inflexion(traces, _sigma_for_gamma(inflexion_gamma()), LENGTH, calibration=calibration)
    result = await method_inflexion(traces, _sigma_for_gamma(inflexion_gamma()), LENGTH,
                                    calibration=calibration, allow_uncalibrated=True)
    assert result.fit_details["calibration"]["overridden"] is True
    assert "calibration failed, overridden" in result.warnings


# ============================================================================
# 방법 A: 변곡점
# ============================================================================

async def test_method_inflexion_noiseless(noiseless_fringe_counts):
    gamma = inflexion_gamma()
    traces = _traces(noiseless_fringe_counts, visibility_closed_form(gamma), 6)
    result = await method_inflexion(traces, _sigma_for_gamma(gamma), LENGTH, max_workers=2)
    assert result.method is CdMethod.INFLEXION_POINT
    assert result.dispersion_ps_nm_km == pytest.approx(17.0, rel=0.03)
    assert len(result.samples) == 6
    assert "calibration not performed" in result.warnings
    assert result.fit_details["n_excluded"] == 0


async def test_method_inflexion_all_edge_repetitions():
    """V̂ = 1 인 반복은 D = 0 으로 기록되고 집계에서 빠짐"""
    traces = [CoincidenceTrace.from_counts([0, 100] * 50) for _ in range(3)]
    settings = EstimationSettings(method=EstimationMethod.MINMAX)
    result = await method_inflexion(traces, _sigma_for_gamma(1.0), LENGTH, settings=settings)
    assert result.dispersion_ps_nm_km == 0.0
    assert result.samples == [0.0, 0.0, 0.0]
    assert result.fit_details["excluded"] == [0, 1, 2]
    assert any("all repetitions excluded" in w for w in result.warnings)


async def test_method_inflexion_needs_traces():
    with pytest.raises(ConfigError):
        await method_inflexion([], 1e12, LENGTH)


# ============================================================================
# 방법 B: 다중 동작점
# ============================================================================

def test_fit_visibility_curve_exact_data():
    length = 4.5
    sigmas = [_sigma_for_gamma(g, length) for g in (0.2, 0.6, 1.0, 2.0, 3.0)]
    visibilities = [visibility_closed_form(2.0 * s**2 * BETA2 * length) for s in sigmas]
    fit = fit_visibility_curve(sigmas, visibilities, None, length)
    assert fit.beta2 == pytest.approx(BETA2, rel=1e-8)
    assert max(abs(r) for r in fit.residuals) < 1e-10


def test_fit_visibility_curve_needs_three_bandwidths():
    with pytest.raises(ConfigError):
        fit_visibility_curve([1e12, 1e12, 2e12], [0.9, 0.9, 0.8], None, 1.0)


def test_fit_visibility_curve_rejects_unusable_errors():
    length = 4.5
    sigmas = [_sigma_for_gamma(g, length) for g in (0.5, 1.0, 2.0)]
    visibilities = [visibility_closed_form(2.0 * s**2 * BETA2 * length) for s in sigmas]
    with pytest.raises(FitError):
        fit_visibility_curve(sigmas, visibilities, [0.01, math.inf, 0.01], length)
    with pytest.raises(FitError):
        fit_visibility_curve(sigmas, visibilities, [0.01, 0.0, 0.01], length)
    unweighted = fit_visibility_curve(sigmas, visibilities, [0.0, 0.0, 0.0], length)
    assert unweighted.beta2 == pytest.approx(BETA2, rel=1e-8)


async def test_method_multipoint_skips_repetition_without_error(noiseless_fringe_counts, monkeypatch):
    """std_error 가 +∞ 인 추정이 있는 반복은 표본에서 NaN 으로 건너뜀"""
    length = 4.5
    points = []
    for gamma in (0.8, 1.5, 2.5, 4.0):
        points.append((_sigma_for_gamma(gamma, length),
                       _traces(noiseless_fringe_counts, visibility_closed_form(gamma), 3)))
    unusable = points[2][1][1]
    real_estimate = cd_flow.estimate_visibility

    def estimate(trace, settings=None):
        result = real_estimate(trace, settings)
        return result.model_copy(update={"std_error": math.inf}) if trace is unusable else result

    monkeypatch.setattr(cd_flow, "estimate_visibility", estimate)
    result = await method_multipoint(points, length, max_workers=2)
    assert math.isnan(result.samples[1])
    assert all(math.isfinite(d) for i, d in enumerate(result.samples) if i != 1)
    assert "1 per-repetition fit(s) skipped" in result.warnings
    assert result.dispersion_ps_nm_km == pytest.approx(17.0, rel=0.03)


async def test_method_multipoint_noiseless(noiseless_fringe_counts):
    length = 4.5
    points = []
    for gamma in (0.8, 1.5, 2.5, 4.0):
        sigma = _sigma_for_gamma(gamma, length)
        points.append((sigma, _traces(noiseless_fringe_counts, visibility_closed_form(gamma), 3)))
    result = await method_multipoint(points, length, max_workers=2)
    assert result.method is CdMethod.MULTI_POINT
    assert result.dispersion_ps_nm_km == pytest.approx(17.0, rel=0.03)
    assert len(result.samples) == 3
    assert len(result.fit_details["table"]) == 4
    assert len(result.fit_details["fit_curve"]["sigma_omega"]) == 200


async def test_method_multipoint_rejects_duplicate_bandwidths(noiseless_fringe_counts):
    traces = _traces(noiseless_fringe_counts, 0.9, 1)
    with pytest.raises(ConfigError):
        await method_multipoint([(1e12, traces), (1e12, traces), (2e12, traces)], 1.0)


# ============================================================================
# 이론 곡선
# ============================================================================

def test_theory_curves_gaussian_and_rectangular():
    curves = theory_curves("both", 3.0, 31)
    gammas, gaussian = curves["gaussian"]
    np.testing.assert_allclose(gaussian, visibility_closed_form(np.asarray(gammas)), atol=1e-15)
    _, rectangular = curves["rectangular"]
    assert rectangular[0] == 1.0
    assert all(0.0 <= v <= 1.0 for v in rectangular)
    assert curves["inflexion"][0][0] == pytest.approx(inflexion_gamma())


def test_theory_curves_without_inflexion_point():
    curves = theory_curves("gaussian", 0.5, 11)
    assert set(curves) == {"gaussian"}


# ============================================================================
# 플로우 실행
# ============================================================================

def _config(output_dir, mode: str, **sections):
    return parse_config({"mode": mode, "seed": 11, "output_dir": str(output_dir), **sections})


def _method_a_sections(repetitions: int = 8, threshold: float = 0.99) -> dict:
    return {
        "physics": {"sample_length_m": LENGTH, "dispersion_ps_nm_km": 17.0, "width_convention": "sigma",
                    "target_gamma": inflexion_gamma()},
        "campaign": {"repetitions": repetitions, "bins_per_trace": 500, "calibration_bins": 2000,
                     "calibration_threshold": threshold},
    }


async def test_flow_theory_writes_manifest(output_dir):
    flow = CdMeasurementFlow(_config(output_dir, "theory-curves", theory={"n_points": 21}))
    state = await flow.kickoff_async()
    manifest = json.loads((output_dir / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["mode"] == "theory-curves"
    assert "plots/gamma-curve_gaussian.csv" in manifest["outputs"]
    assert set(state.theory) == {"gaussian", "inflexion"}


async def test_flow_simulate_then_estimate(output_dir):
    simulate = _config(output_dir, "simulate", simulate={"visibility": 0.8, "n_bins": 3000})
    await CdMeasurementFlow(simulate).kickoff_async()
    trace_path = output_dir / "trace.csv"
    assert trace_path.exists()

    estimate_dir = output_dir / "estimate"
    estimate = _config(estimate_dir, "estimate", estimate={"trace_path": str(trace_path)})
    state = await CdMeasurementFlow(estimate).kickoff_async()
    report = json.loads((estimate_dir / "estimate.json").read_text(encoding="utf-8"))
    assert report["true_visibility"] == 0.8
    assert report["visibility"] == pytest.approx(0.8, abs=0.03)
    assert state.estimate.visibility == report["visibility"]


async def test_flow_method_a_deterministic_across_workers(tmp_path):
    texts = []
    for workers in (1, 3):
        out = tmp_path / f"run_{workers}"
        flow = CdMeasurementFlow(_config(out, "method-a", **_method_a_sections()), max_workers=workers)
        state = await flow.kickoff_async()
        assert state.result.method is CdMethod.INFLEXION_POINT
        assert state.calibration.passed
        texts.append((out / "results.json").read_text(encoding="utf-8"))
    assert texts[0] == texts[1]


async def test_flow_failed_calibration_logs_event(output_dir):
    sections = _method_a_sections(repetitions=2)
    # 넓은 캘리브레이션 필터: γ ≈ 1, V ≈ 0.84
    sections["physics"]["calibration_filter_width_nm"] = 4.0
    config = _config(output_dir, "method-a", **sections)
    flow = CdMeasurementFlow(config, event_logger=RunEventLogger(output_dir))
    with pytest.raises(CalibrationError):
        await flow.kickoff_async()
    events = [json.loads(line) for line in
              (output_dir / "logs" / "events.jsonl").read_text(encoding="utf-8").splitlines()]
    assert events[-1]["event_type"] == "flow_failed"
    assert events[-1]["data"]["error_type"] == "CalibrationError"


async def test_flow_method_b_outputs(output_dir):
    config = _config(output_dir, "method-b", physics={
        "sample_length_m": 4.5, "dispersion_ps_nm_km": 17.0, "width_convention": "sigma",
        "filter_widths_nm": [1.0, 2.0, 3.0, 4.0],
    }, campaign={"repetitions": 4, "bins_per_trace": 500, "calibration_bins": 2000,
                 "calibration_threshold": 0.99})
    state = await CdMeasurementFlow(config, max_workers=2).kickoff_async()
    assert state.result.method is CdMethod.MULTI_POINT
    assert len(state.result.samples) == 4
    assert (output_dir / "plots" / "visibility-vs-bandwidth_measured.csv").exists()
    assert (output_dir / "results.json").exists()


async def test_flow_traces_use_interferometer_phase_offset(output_dir):
    sections = _method_a_sections(repetitions=2)
    sections["campaign"]["phi0_rad"] = 0.7
    flow = CdMeasurementFlow(_config(output_dir, "method-a", **sections))
    interferometer = flow.interferometer()
    assert interferometer.static_phase_offset == 0.7
    assert interferometer.sample.length == LENGTH
    assert abs(interferometer.sample.beta2) == pytest.approx(BETA2, rel=1e-9)
    traces = await flow.simulate_traces(0.88, 2, 100, stream=1)
    assert [t.metadata["phi0"] for t in traces] == [0.7, 0.7]


# ============================================================================
# 수용 시험 (전체 규모)
# ============================================================================

def _method_b_config(output_dir):
    return _config(output_dir, "method-b", physics={
        "sample_length_m": 4.5, "dispersion_ps_nm_km": 17.0, "width_convention": "sigma",
        "filter_widths_nm": [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0],
    }, campaign={"repetitions": 200, "bins_per_trace": 500, "calibration_bins": 2000})


@pytest.mark.slow
async def test_acceptance_methods_a_and_b(tmp_path):
    config_a = _config(tmp_path / "a", "method-a", **_method_a_sections(repetitions=200))
    result_a = (await CdMeasurementFlow(config_a).kickoff_async()).result
    assert result_a.dispersion_ps_nm_km == pytest.approx(17.0, rel=0.02)
    assert len(result_a.samples) == 200
    # 평균의 표준오차가 0.2 ps/(nm·km) 의 2배 이내
    assert 0.1 <= result_a.std_error <= 0.4
    assert result_a.fit_details["distribution_width"] > result_a.std_error
    # 트레이스별 V̂ 표준오차와 반복 간 V̂ 퍼짐이 2배 이내
    spread = np.std(result_a.fit_details["visibilities"], ddof=1)
    typical_error = np.median(result_a.fit_details["visibility_std_errors"])
    assert 0.5 < typical_error / spread < 2.0

    result_b = (await CdMeasurementFlow(_method_b_config(tmp_path / "b")).kickoff_async()).result
    assert result_b.dispersion_ps_nm_km == pytest.approx(17.0, rel=0.02)
    visibilities = [row["visibility"] for row in result_b.fit_details["table"]]
    assert all(b < a for a, b in zip(visibilities, visibilities[1:]))

    combined = math.hypot(result_a.std_error, result_b.std_error)
    assert abs(result_a.dispersion_ps_nm_km - result_b.dispersion_ps_nm_km) < 2.0 * combined


@pytest.mark.slow
async def test_multipoint_standard_errors_equal_at_constant_statistics():
    """최대 계수가 같은 트레이스에서 대역폭별 V̂ 표준오차가 30% 이내로 같음"""
    length = 4.5
    points = []
    for k, gamma in enumerate((0.6, inflexion_gamma(), 1.0)):
        visibility = visibility_closed_form(gamma)
        traces = [simulate_trace(visibility, 0.0, UniformRandomPhase(),
                                 DetectorModel(seed=derive_seed(k, index)), 500) for index in range(200)]
        points.append((_sigma_for_gamma(gamma, length), traces))
    result = await method_multipoint(points, length, max_workers=2)
    sems = [row["sem"] for row in result.fit_details["table"]]
    assert max(sems) / min(sems) < 1.3
    assert result.fit_details["sem_spread_ratio"] == pytest.approx(max(sems) / min(sems))
