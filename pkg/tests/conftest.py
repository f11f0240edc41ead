import numpy as np
import pytest

from mcgrad.rng import RngStream


@pytest.fixture
def rng():
    return RngStream(12345)


def assert_within_se(estimate, target, variance, n, sigma=4.0, extra=0.0):
    """|estimate - target| <= sigma * sqrt(variance / n) + extra."""
    se = np.sqrt(np.maximum(np.asarray(variance, dtype=float), 0.0) / n)
    diff = np.abs(np.asarray(estimate, dtype=float) - np.asarray(target, dtype=float))
    tol = sigma * se + extra + 1e-12
    assert np.all(diff <= tol), f"estimate {estimate} vs {target}: diff {diff} > tol {tol}"
