import os
import asyncio
import logging
from typing import Callable, Iterable, Optional, TypeVar

from dotenv import load_dotenv

# ============================================================================
# 설정 및 초기화
# ============================================================================

load_dotenv()

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

DEFAULT_WORKERS = 4


def default_workers() -> int:
    """CDMEAS_WORKERS 환경변수 (기본 4)"""
    try:
        return max(1, int(os.getenv("CDMEAS_WORKERS", DEFAULT_WORKERS)))
    except ValueError:
        logger.warning(f"⚠️ CDMEAS_WORKERS 값이 정수가 아닙니다: {os.getenv('CDMEAS_WORKERS')!r}, 기본값 사용")
        return DEFAULT_WORKERS


# ============================================================================
# 병렬 실행
# ============================================================================

async def map_in_threads(func: Callable[[T], R], items: Iterable[T],
                         max_workers: Optional[int] = None) -> list[R]:
    """items 각각에 func 를 스레드에서 실행, 입력 순서대로 결과 반환

    결과는 입력 순서로만 결정되므로 워커 수와 무관하다.
    """
    items = list(items)
    limit = asyncio.Semaphore(max_workers or default_workers())

    async def run_one(item: T) -> R:
        async with limit:
            return await asyncio.to_thread(func, item)

    return list(await asyncio.gather(*(run_one(item) for item in items)))
