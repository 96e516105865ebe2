from contextvars import ContextVar
import logging

# ============================================================================
# 초기화 및 설정
# ============================================================================

logger = logging.getLogger(__name__)

# ContextVar 기반 실행 컨텍스트 관리
run_id_var: ContextVar[str] = ContextVar("run_id", default="unknown")
mode_var: ContextVar[str] = ContextVar("mode", default="unknown")
seed_var: ContextVar[int] = ContextVar("seed", default=None)


# ============================================================================
# 컨텍스트 관리
# ============================================================================

def set_run_context(run_id: str, mode: str, seed: int = None):
    """ContextVar에 실행 정보 설정 및 토큰 반환"""
    token_run = run_id_var.set(run_id)
    token_mode = mode_var.set(mode)
    token_seed = seed_var.set(seed)
    logger.debug(f"🔍 실행 컨텍스트 설정: run_id={run_id}, mode={mode}, seed={seed}")
    return token_run, token_mode, token_seed


def reset_run_context(token_run, token_mode, token_seed) -> None:
    """ContextVar 설정을 이전 상태로 복원"""
    run_id_var.reset(token_run)
    mode_var.reset(token_mode)
    seed_var.reset(token_seed)


def current_run_context() -> dict:
    return {"run_id": run_id_var.get(), "mode": mode_var.get(), "seed": seed_var.get()}
