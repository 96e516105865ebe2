# -*- coding: utf-8 -*-
import os
import sys
import json
import uuid
import asyncio
import logging
import argparse
from typing import Any, Optional, Sequence

from dotenv import load_dotenv
from pydantic import ValidationError

load_dotenv()

# 현재 디렉토리를 Python 경로에 추가
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from config.campaign_config import CampaignConfig, load_config, with_overrides
from config.run_event_logger import RunEventLogger
from core.errors import CdMeasurementError
from core.units import (
    DEFAULT_DEGENERACY_WAVELENGTH,
    beta2_to_dispersion_coeff,
    dispersion_coeff_to_beta2,
    filter_width_to_sigma_omega,
    ps_nm_km_to_si,
    si_to_ps_nm_km,
)
from core.worker import default_workers
from flows.cd_measurement_flow import CdMeasurementFlow, CdMeasurementState
from utils.context_manager import reset_run_context, set_run_context
from utils.persistence import sanitize

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2

ESTIMATION_METHODS = {"pdf-fit": "pdf_fit", "min-max": "minmax", "minmax": "minmax", "fringe-fit": "fringe_fit"}


# ============================================================================
# 로깅 설정
# ============================================================================

def configure_logging() -> None:
    """표준 에러로만 로그 출력"""
    level = os.getenv("CDMEAS_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )


# ============================================================================
# 인자 파서
# ============================================================================

class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    """잘못된 인자는 사용법 출력 후 종료 코드 1"""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="캠페인 설정 YAML")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--output-dir")
    parser.add_argument("--workers", type=int, default=None)


def _add_detector(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mean-max", type=float, help="무늬 최대에서의 빈당 평균 계수")
    parser.add_argument("--bin-duration", type=float, help="빈 길이 (s)")
    parser.add_argument("--drift", choices=["uniform", "random_walk", "thermal"])
    parser.add_argument("--step-std", type=float, help="random_walk 단계 표준편차 (rad)")


def _add_physics(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--d", type=float, help="D (ps/(nm·km))")
    group.add_argument("--beta2", type=float, help="β⁽²⁾ (s²/m)")
    parser.add_argument("--lambda", dest="wavelength", type=float, help="축퇴 파장 (m)")
    parser.add_argument("--length", type=float, help="시료 길이 (m)")
    parser.add_argument("--width-convention", choices=["sigma", "fwhm"])
    parser.add_argument("--repetitions", type=int)
    parser.add_argument("--bins", type=int, help="트레이스당 빈 수")
    parser.add_argument("--calibration-threshold", type=float)
    parser.add_argument("--allow-uncalibrated", action="store_true", default=None)
    parser.add_argument("--method", choices=sorted(ESTIMATION_METHODS))


def build_parser() -> CliParser:
    parser = CliParser(prog="cdmeas", description="2광자 간섭 기반 색분산 측정")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    simulate = sub.add_parser("simulate", help="자유 진행 동시계수 트레이스 생성")
    _add_common(simulate)
    _add_detector(simulate)
    simulate.add_argument("--v", type=float, dest="visibility")
    simulate.add_argument("--bins", type=int)
    simulate.add_argument("--phi0", type=float)

    estimate = sub.add_parser("estimate", help="트레이스 가시도 추정")
    _add_common(estimate)
    estimate.add_argument("--trace")
    estimate.add_argument("--method", choices=sorted(ESTIMATION_METHODS))
    estimate.add_argument("--likelihood", choices=["least_squares", "poisson_least_squares", "poisson_mixture"])
    estimate.add_argument("--window", type=int, nargs=2, metavar=("START", "STOP"))

    method_a = sub.add_parser("method-a", help="변곡점 방법 CD 측정")
    _add_common(method_a)
    _add_detector(method_a)
    _add_physics(method_a)
    method_a.add_argument("--width-nm", type=float)
    method_a.add_argument("--target-gamma", type=float)

    method_b = sub.add_parser("method-b", help="다중 동작점 방법 CD 측정")
    _add_common(method_b)
    _add_detector(method_b)
    _add_physics(method_b)
    method_b.add_argument("--widths-nm", type=float, nargs="+")
    method_b.add_argument("--repetitions-per-bandwidth", type=int)

    theory = sub.add_parser("theory-curves", help="γ 에 대한 가시도 곡선")
    _add_common(theory)
    theory.add_argument("--shape", choices=["gaussian", "rectangular", "both"])
    theory.add_argument("--gamma-max", type=float)
    theory.add_argument("--points", type=int)

    convert = sub.add_parser("convert-units", help="단위 변환 (파일 출력 없음)")
    group = convert.add_mutually_exclusive_group()
    group.add_argument("--d", type=float, help="D (ps/(nm·km))")
    group.add_argument("--beta2", type=float, help="β⁽²⁾ (s²/m)")
    convert.add_argument("--lambda", dest="wavelength", type=float, default=DEFAULT_DEGENERACY_WAVELENGTH)
    convert.add_argument("--width-nm", type=float)
    convert.add_argument("--width-convention", choices=["sigma", "fwhm"])
    return parser


# ============================================================================
# 설정 조립
# ============================================================================

def _get(args: argparse.Namespace, name: str) -> Any:
    return getattr(args, name, None)


def build_config(args: argparse.Namespace) -> CampaignConfig:
    """설정 파일 < CLI 플래그 순으로 병합"""
    base = load_config(args.config) if _get(args, "config") else None
    mode = args.command
    method = _get(args, "method")
    overrides: dict[str, Any] = {
        "seed": _get(args, "seed"),
        "output_dir": _get(args, "output_dir"),
        "detector.bin_duration_s": _get(args, "bin_duration"),
        "drift.kind": _get(args, "drift"),
        "drift.step_std_rad": _get(args, "step_std"),
        "estimation.method": ESTIMATION_METHODS[method] if method else None,
        "estimation.likelihood": _get(args, "likelihood"),
        "estimation.window_bins": _get(args, "window"),
        "estimate.trace_path": _get(args, "trace"),
        "simulate.visibility": _get(args, "visibility"),
        "campaign.phi0_rad": _get(args, "phi0"),
        "physics.dispersion_ps_nm_km": _get(args, "d"),
        "physics.beta2_s2_per_m": _get(args, "beta2"),
        "physics.sample_length_m": _get(args, "length"),
        "physics.width_convention": _get(args, "width_convention"),
        "physics.filter_width_nm": _get(args, "width_nm"),
        "physics.filter_widths_nm": _get(args, "widths_nm"),
        "physics.target_gamma": _get(args, "target_gamma"),
        "campaign.repetitions": _get(args, "repetitions"),
        "campaign.repetitions_per_bandwidth": _get(args, "repetitions_per_bandwidth"),
        "campaign.calibration_threshold": _get(args, "calibration_threshold"),
        "campaign.allow_uncalibrated": _get(args, "allow_uncalibrated"),
        "theory.shape": _get(args, "shape"),
        "theory.gamma_max": _get(args, "gamma_max"),
        "theory.n_points": _get(args, "points"),
    }
    if mode == "simulate":
        overrides["simulate.n_bins"] = _get(args, "bins")
    else:
        overrides["campaign.bins_per_trace"] = _get(args, "bins")
    wavelength = _get(args, "wavelength")
    if wavelength is not None:
        overrides["physics.degeneracy_wavelength_m"] = wavelength
        overrides["physics.pump_wavelength_m"] = wavelength / 2.0
    config = with_overrides(base, mode, overrides)

    mean_max = _get(args, "mean_max")
    if mean_max is not None:
        rate = mean_max / config.detector.bin_duration_s
        config = with_overrides(config, mode, {"detector.max_coincidence_rate_hz": rate})
    return config


# ============================================================================
# 서브커맨드
# ============================================================================

def convert_units(args: argparse.Namespace) -> dict[str, Any]:
    """D ↔ β⁽²⁾, 필터 폭 → σ_ω 변환 결과"""
    wavelength = args.wavelength
    payload: dict[str, Any] = {"schema": 1, "center_wavelength_m": wavelength}
    if args.d is not None:
        payload["dispersion_ps_nm_km"] = args.d
        payload["dispersion_s_per_m2"] = ps_nm_km_to_si(args.d)
        payload["beta2_s2_per_m"] = dispersion_coeff_to_beta2(ps_nm_km_to_si(args.d), wavelength)
    if args.beta2 is not None:
        dispersion = beta2_to_dispersion_coeff(args.beta2, wavelength)
        payload["beta2_s2_per_m"] = args.beta2
        payload["dispersion_s_per_m2"] = dispersion
        payload["dispersion_ps_nm_km"] = si_to_ps_nm_km(dispersion)
    if args.width_nm is not None:
        if args.width_convention is None:
            raise UsageError("--width-nm 에는 --width-convention 이 필요합니다")
        payload["width_nm"] = args.width_nm
        payload["width_convention"] = args.width_convention
        payload["sigma_omega_rad_per_s"] = filter_width_to_sigma_omega(args.width_nm, wavelength,
                                                                       args.width_convention)
    if len(payload) == 2:
        raise UsageError("--d, --beta2, --width-nm 중 하나 이상이 필요합니다")
    return payload


def _theory_table(state: CdMeasurementState) -> str:
    curves = {name: data for name, data in state.theory.items() if name != "inflexion"}
    names = sorted(curves)
    lines = [",".join(["gamma"] + [f"V_{name}" for name in names])]
    gammas = curves[names[0]]["x"]
    for i, gamma in enumerate(gammas):
        lines.append(",".join([repr(gamma)] + [repr(curves[name]["y"][i]) for name in names]))
    if "inflexion" in state.theory:
        point = state.theory["inflexion"]
        lines.append(f"# inflexion,{point['x'][0]!r},{point['y'][0]!r}")
    return "\n".join(lines)


def _print_json(payload: Any) -> None:
    sys.stdout.write(json.dumps(sanitize(payload), sort_keys=True, indent=2, ensure_ascii=False) + "\n")


async def run_campaign(config: CampaignConfig, max_workers: Optional[int]) -> CdMeasurementState:
    """실행 컨텍스트 설정 후 플로우 실행"""
    tokens = set_run_context(str(uuid.uuid4()), config.mode, config.seed)
    try:
        flow = CdMeasurementFlow(config, RunEventLogger(config.output_dir), max_workers=max_workers)
        return await flow.kickoff_async()
    finally:
        reset_run_context(*tokens)


def _report(state: CdMeasurementState) -> None:
    if state.mode == "theory-curves":
        sys.stdout.write(_theory_table(state) + "\n")
    elif state.mode == "estimate" and state.estimate is not None:
        _print_json(state.estimate.to_report())
    elif state.result is not None:
        result = state.result
        _print_json({
            "schema": 1,
            "method": result.method.value,
            "dispersion_ps_nm_km": result.dispersion_ps_nm_km,
            "std_error": result.std_error,
            "beta2": result.beta2,
            "beta2_std_error": result.beta2_std_error,
            "warnings": result.warnings,
        })


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """CLI 진입점, 종료 코드 반환 (0 성공, 1 입력/설정/IO 오류, 2 수치 실패)"""
    configure_logging()
    try:
        args = build_parser().parse_args(argv)
        if args.command == "convert-units":
            _print_json(convert_units(args))
            return EXIT_OK
        config = build_config(args)
        workers = args.workers or default_workers()
        state = asyncio.run(run_campaign(config, workers))
        _report(state)
        return EXIT_OK
    except UsageError as e:
        sys.stderr.write(f"{e}\n")
        return EXIT_USAGE
    except CdMeasurementError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return e.exit_code
    except ValidationError as e:
        logger.error(f"❌ 입력 검증 실패: {e}")
        return EXIT_USAGE
    except OSError as e:
        logger.error(f"❌ 입출력 오류: {e}")
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return int(e.code or 0)
    except Exception as e:
        logger.exception(f"❌ 예상하지 못한 오류: {e}")
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
