import os
import sys

import numpy as np
import pytest

# Add project root to Python path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from src.monitor.logger import Logger
from src.tensor.tensor_train import random_tt, random_ttm
from src.volterra.signals import make_rng

@pytest.fixture
def rng():
    """Seeded generator shared by a single test"""
    return make_rng(1234)

@pytest.fixture
def make_tt(rng):
    """Factory for random tensor trains"""
    def factory(l=1, n=3, ranks=(2,)):
        return random_tt(l, n, list(ranks), rng)
    return factory

@pytest.fixture
def make_ttm(rng):
    """Factory for random square TT-matrices"""
    def factory(l=1, n=3, ranks=(2,)):
        return random_ttm(l, n, list(ranks), rng)
    return factory

@pytest.fixture
def make_spd(rng):
    """Factory for (l, N, N) stacks of symmetric positive definite matrices"""
    def factory(l, size):
        stack = []
        for _ in range(l):
            a = rng.standard_normal((size, size))
            stack.append(a @ a.T + size * np.eye(size))
        return np.stack(stack)
    return factory

@pytest.fixture
def output_dir(tmp_path):
    """Fresh directory for files written by a command"""
    path = tmp_path / "results"
    path.mkdir()
    return path

@pytest.fixture
def fresh_logger(tmp_path):
    """Reset the Logger singleton around a test that configures it"""
    Logger.reset()
    yield tmp_path / "logs"
    Logger.reset()

@pytest.fixture
def clean_env(monkeypatch):
    """Remove TNK_ variables so defaults apply"""
    for name in list(os.environ):
        if name.startswith('TNK_'):
            monkeypatch.delenv(name, raising=False)
    return monkeypatch

def pytest_configure(config):
    """Configure pytest with custom markers"""
    config.addinivalue_line(
        "markers", "integration: mark test as integration test"
    )
    config.addinivalue_line(
        "markers", "slow: mark test as slow running"
    )
