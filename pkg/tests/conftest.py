"""Shared oracles: central finite differences against hand-written backwards."""

import numpy as np
import pytest

FD_STEP = 1e-5


def numeric_grad(f, x, step: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of scalar f at array x (binary64)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(x.size):
        orig = xf[i]
        xf[i] = orig + step
        hi = f(x)
        xf[i] = orig - step
        lo = f(x)
        xf[i] = orig
        flat[i] = (hi - lo) / (2.0 * step)
    return grad


def rel_err(approx: np.ndarray, exact: np.ndarray) -> float:
    """max|a-e| scaled by the larger magnitude; 0/0 counts as agreement."""
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    scale = max(np.abs(approx).max(initial=0.0), np.abs(exact).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(approx - exact).max() / scale)


@pytest.fixture
def gen():
    return np.random.default_rng(20240817)
