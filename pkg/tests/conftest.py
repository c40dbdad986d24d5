import pytest

from ctmc_core import TruncationCaps, solve_model2
from polling_model import PollingParams, base_params, normalize_model2


@pytest.fixture(scope='session')
def base() -> PollingParams:
    """λ1=0.1, λ2=0.3, μ1=0.5, μ2=1, μ3=1.5, N=10，λ3 = 0"""
    return base_params()


@pytest.fixture(scope='session')
def p2(base):
    return normalize_model2(base)


@pytest.fixture(scope='session')
def model2_caps() -> TruncationCaps:
    return TruncationCaps(60, 300)


@pytest.fixture(scope='session')
def oracle(p2, model2_caps):
    """Model II 截断链平稳分布（整个测试会话只求解一次）"""
    return solve_model2(p2, model2_caps)


@pytest.fixture
def out_dir(tmp_path):
    return str(tmp_path / 'results')
