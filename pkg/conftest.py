"""Shared fixtures for the disaggregation test suites."""

import numpy as np
import pytest

from config import TrainConfig


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size synthetic acceptance runs (deselect with -m 'not slow')")


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def small_problem(rng):
    """8 x 20 aggregate windows with 3 binary labels"""
    X = rng.standard_normal((8, 20))
    Y = (rng.random((3, 20)) < 0.5).astype(np.float64)
    return X, Y


@pytest.fixture
def small_config():
    return TrainConfig(layer_sizes=(6, 5, 4), max_iter=15, tol=1e-12, infer_iter=20, seed=7)


@pytest.fixture
def exact_config():
    """No numerical ridge, so every closed-form block is the exact minimizer"""
    return TrainConfig(layer_sizes=(6, 5, 4), max_iter=15, tol=1e-12, infer_iter=20, seed=7, ridge_delta=0.0)
