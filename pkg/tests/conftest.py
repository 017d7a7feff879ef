"""
Shared fixtures

Puts the project root on sys.path and registers a hypothesis profile that
keeps property tests quick.
"""
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

settings.register_profile(
    "fast",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("fast")


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def make_gamma():
    """Factory for well-conditioned random covariance matrices."""
    def factory(k: int, seed: int = 0, floor: float = 0.5) -> np.ndarray:
        g = np.random.default_rng(seed).standard_normal((k, k))
        return g @ g.T / k + floor * np.eye(k)
    return factory
