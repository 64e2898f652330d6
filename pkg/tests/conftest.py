import numpy as np
import pytest

from bvrsim.Problems import build_mlp_softplus, build_quartic_saddle, build_softmax_regression
from bvrsim.Settings import Settings


@pytest.fixture(autouse=True)
def settings():
    """every test sees the built-in defaults, never ~/.bvrsim.json or BVRSIM_* variables"""
    Settings.reset()
    yield Settings(from_defaults=True)
    Settings.reset()


@pytest.fixture
def quartic():
    """two workers whose Hessians differ by exactly 0.5"""
    return build_quartic_saddle(d=6, P=2, lambda_neg=1.0, gamma=1.0, zeta=0.5, seed=0, samples_per_worker=12)


@pytest.fixture
def quartic_single():
    return build_quartic_saddle(d=10, P=1, lambda_neg=1.0, gamma=1.0, zeta=0.0, seed=0)


@pytest.fixture
def softmax():
    return build_softmax_regression(n=96, P=4, n_classes=3, n_features=4, q=0.5, seed=1)


@pytest.fixture
def mlp():
    return build_mlp_softplus(n=64, P=2, n_classes=3, n_features=3, q=0.5, seed=2, hidden=4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
