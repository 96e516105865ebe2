import json
import uuid
import logging
import threading
import traceback
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional

from utils.context_manager import mode_var, run_id_var

# ============================================================================
# 초기화 및 설정
# ============================================================================

logger = logging.getLogger(__name__)


class RunEventLogger:
    """실행 이벤트 로깅 시스템 - JSONL 파일 전용"""

    def __init__(self, output_dir: Optional[str | Path] = None):
        """output_dir 가 None 이면 콘솔 로그만 남김"""
        self.path: Optional[Path] = None
        self._lock = threading.Lock()
        if output_dir is not None:
            self.path = Path(output_dir) / "logs" / "events.jsonl"
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
            except OSError as e:
                self._handle_error("로그디렉터리생성", e)
                self.path = None
        logger.info(f"🎯 Run Event Logger 초기화 완료 (events: {self.path or '없음'})")

    # ============================================================================
    # 유틸리티 함수
    # ============================================================================

    def _handle_error(self, operation: str, error: Exception) -> None:
        """이벤트 로깅 실패는 실행을 중단시키지 않음"""
        logger.error(f"❌ [{operation}] 오류 발생: {error}")
        logger.debug(f"상세 정보: {traceback.format_exc()}")

    def _create_event_record(self, event_type: str, data: Dict[str, Any], job_id: str,
                             run_id: str, mode: str) -> Dict[str, Any]:
        return {
            "id": str(uuid.uuid4()),
            "run_id": run_id,
            "mode": mode,
            "event_type": event_type,
            "job_id": job_id,
            "data": data,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }

    def _safe_serialize_data(self, data: Dict[str, Any]) -> Dict[str, Any]:
        """JSON 으로 표현할 수 없는 값은 문자열로"""
        safe = {}
        for key, value in data.items():
            if hasattr(value, "model_dump"):
                safe[key] = value.model_dump(mode="json")
            elif isinstance(value, (str, int, float, bool, type(None), list, dict)):
                safe[key] = value
            else:
                safe[key] = str(value)
        return safe

    # ============================================================================
    # 파일 저장
    # ============================================================================

    def _append(self, record: Dict[str, Any]) -> None:
        if self.path is None:
            return
        try:
            line = json.dumps(record, ensure_ascii=False, default=str)
            with self._lock, self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        except (OSError, TypeError, ValueError) as e:
            self._handle_error("이벤트저장", e)

    # ============================================================================
    # 이벤트 발행
    # ============================================================================

    def emit_event(self, event_type: str, data: Dict[str, Any], job_id: Optional[str] = None) -> Dict[str, Any]:
        """커스텀 이벤트 발행, 실행 컨텍스트는 ContextVar 에서"""
        run_id = run_id_var.get()
        mode = mode_var.get()
        job_id = job_id or event_type
        record = self._create_event_record(event_type, self._safe_serialize_data(data), job_id, run_id, mode)
        self._append(record)
        logger.info(f"📝 [{event_type}] [{mode}] {job_id[:24]} → events: {'✅' if self.path else '-'}")
        return record
