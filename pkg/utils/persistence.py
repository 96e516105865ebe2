import csv
import json
import math
import hashlib
import logging
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np

from core.errors import PersistenceError
from tools.drift_simulator import CoincidenceTrace

# ============================================================================
# 설정 및 초기화
# ============================================================================

logger = logging.getLogger(__name__)

SCHEMA = 1
TRACE_SCHEMA_VERSION = "1"
TRACE_HEADER = ["bin_index", "time_s", "counts"]


def _handle_error(operation: str, path: Path, error: Exception) -> None:
    logger.error(f"❌ [{operation}] 오류 발생: {path} ({error})")
    raise PersistenceError(f"{operation} 실패: {path} ({error})") from error


# ============================================================================
# JSON
# ============================================================================

def sanitize(value: Any) -> Any:
    """JSON 직렬화 가능한 값으로 변환, 비유한 실수는 문자열"""
    if hasattr(value, "model_dump"):
        return sanitize(value.model_dump(mode="json"))
    if isinstance(value, dict):
        return {str(k): sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [sanitize(v) for v in value]
    if isinstance(value, np.ndarray):
        return [sanitize(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return sanitize(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


def write_json(path: str | Path, data: Any) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        text = json.dumps(sanitize(data), sort_keys=True, indent=2, ensure_ascii=False)
        path.write_text(text + "\n", encoding="utf-8")
    except (OSError, TypeError, ValueError) as e:
        _handle_error("JSON저장", path, e)
    logger.info(f"✅ JSON 저장: {path}")
    return path


def read_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        _handle_error("JSON읽기", path, e)


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ============================================================================
# 트레이스 CSV + 사이드카 JSON
# ============================================================================

def sidecar_path(csv_path: str | Path) -> Path:
    return Path(csv_path).with_suffix(".json")


def save_trace(trace: CoincidenceTrace, csv_path: str | Path) -> tuple[Path, Path]:
    """`bin_index,time_s,counts` CSV 와 생성 파라미터 사이드카 JSON 저장"""
    csv_path = Path(csv_path)
    try:
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        with csv_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRACE_HEADER)
            for index, count in enumerate(trace.counts):
                writer.writerow([index, repr(index * trace.bin_duration), count])
    except OSError as e:
        _handle_error("트레이스저장", csv_path, e)
    meta = {
        "schema": SCHEMA,
        "schema_version": TRACE_SCHEMA_VERSION,
        "bin_duration_s": trace.bin_duration,
        "n_bins": len(trace),
        "true_visibility": trace.true_visibility,
        "metadata": trace.metadata,
    }
    json_path = write_json(sidecar_path(csv_path), meta)
    logger.info(f"✅ 트레이스 저장: {csv_path} ({len(trace)} bins)")
    return csv_path, json_path


def load_trace(csv_path: str | Path) -> CoincidenceTrace:
    """트레이스 CSV 로드, 사이드카가 있으면 bin_duration/메타데이터 복원"""
    csv_path = Path(csv_path)
    try:
        with csv_path.open("r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != TRACE_HEADER:
                raise ValueError(f"CSV 헤더가 {','.join(TRACE_HEADER)} 이어야 합니다: {header}")
            rows = [row for row in reader if row]
    except (OSError, ValueError) as e:
        _handle_error("트레이스읽기", csv_path, e)
    if not rows:
        raise PersistenceError(f"빈 트레이스 파일: {csv_path}")

    counts = [int(row[2]) for row in rows]
    meta: dict[str, Any] = {}
    if sidecar_path(csv_path).exists():
        meta = read_json(sidecar_path(csv_path))
        bin_duration = float(meta["bin_duration_s"])
    elif len(rows) > 1:
        bin_duration = float(rows[1][1]) - float(rows[0][1])
    else:
        raise PersistenceError(f"bin_duration 을 알 수 없습니다 (사이드카 없음, 1개 빈): {csv_path}")

    return CoincidenceTrace(
        bin_duration=bin_duration,
        counts=tuple(counts),
        true_visibility=meta.get("true_visibility"),
        metadata=meta.get("metadata", {}),
    )


# ============================================================================
# 매니페스트
# ============================================================================

def write_manifest(output_dir: str | Path, *, tool_version: str, config_hash: str, seed: int, mode: str,
                   outputs: Iterable[str | Path], extra: Optional[dict] = None) -> Path:
    """재현용 매니페스트 (시각 정보 없음)"""
    output_dir = Path(output_dir)
    entries = {}
    for path in sorted({Path(p) for p in outputs}):
        try:
            relative = path.relative_to(output_dir).as_posix()
        except ValueError:
            relative = path.as_posix()
        entries[relative] = sha256_file(path)
    manifest = {
        "schema": SCHEMA,
        "tool_version": tool_version,
        "mode": mode,
        "config_hash": config_hash,
        "seed": seed,
        "outputs": entries,
    }
    if extra:
        manifest.update(extra)
    return write_json(output_dir / "manifest.json", manifest)
