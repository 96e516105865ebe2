import os
import sys

import numpy as np
import pytest
from dotenv import load_dotenv

# 프로젝트 루트 디렉토리를 Python 경로에 추가
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if project_root not in sys.path:
    sys.path.insert(0, project_root)


def pytest_configure():
    # test 환경으로 강제 설정
    os.environ['ENV'] = 'test'
    # .env.test 로드(override=True 로 덮어쓰기)
    load_dotenv(os.path.join(project_root, '.env.test'), override=True)


# ============================================================================
# 공용 픽스처
# ============================================================================

@pytest.fixture
def output_dir(tmp_path):
    """테스트별 출력 디렉터리"""
    path = tmp_path / "outputs"
    path.mkdir()
    return path


@pytest.fixture
def noiseless_fringe_counts():
    """균일 위상 격자 위의 잡음 없는 무늬 계수 생성기"""
    def make(visibility: float, n_bins: int = 10_000, scale: float = 1e6, phi0: float = 0.0):
        phases = 2.0 * np.pi * (np.arange(n_bins) + 0.5) / n_bins
        values = scale * (1.0 + visibility * np.cos(phases + phi0)) / (1.0 + visibility)
        return np.rint(values).astype(np.int64)
    return make
