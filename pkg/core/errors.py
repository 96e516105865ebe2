import logging
import traceback

from pydantic import ValidationError

# ============================================================================
# 예외 계층
# ============================================================================

logger = logging.getLogger(__name__)


class CdMeasurementError(Exception):
    """모든 도메인 예외의 기반 클래스 (CLI 종료 코드 포함)"""
    exit_code = 1


class DomainError(CdMeasurementError, ValueError):
    """입력값이 연산의 정의역을 벗어남"""


class InvalidSpectrumError(DomainError):
    """정규화 불가능한 스펙트럼"""


class DegenerateTraceError(DomainError):
    """C_max + C_min = 0 처럼 정보가 없는 트레이스"""


class InsufficientDataError(DomainError):
    """추정에 필요한 데이터 부족"""


class ConfigError(CdMeasurementError):
    """캠페인 설정 오류"""


class CalibrationError(CdMeasurementError):
    """캘리브레이션 미통과 상태에서 CD 측정 시도"""


class PersistenceError(CdMeasurementError):
    """출력 파일 쓰기/읽기 실패"""


class NumericError(CdMeasurementError):
    """수치 계산 실패"""
    exit_code = 2


class QuadratureError(NumericError):
    """적분 수렴 실패"""

    def __init__(self, message: str, error_estimate: float):
        super().__init__(f"{message} (error estimate={error_estimate:.3e})")
        self.error_estimate = error_estimate


class FitError(NumericError):
    """피팅 수렴 실패"""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# ============================================================================
# 통합 에러 처리
# ============================================================================

def handle_error(operation: str, error: Exception) -> None:
    """통합 에러 처리: 로그 후 도메인 예외는 그대로, 그 외는 NumericError로 감싸서 재발생"""
    logger.error(f"❌ [{operation}] 오류 발생: {error}")
    logger.debug(f"상세 정보: {traceback.format_exc()}")
    if isinstance(error, (CdMeasurementError, ValidationError)):
        raise error
    raise NumericError(f"{operation} 실패: {error}") from error
