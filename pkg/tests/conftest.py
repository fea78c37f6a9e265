"""Shared test helpers: finite-difference oracles and tiny model builders."""

import numpy as np
import pytest


def central_diff_gradient(f, x, h=1e-6):
    """Central finite-difference gradient of scalar f at x (any-shape array)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_error(analytic, numeric, floor=1e-8):
    """Componentwise |a - n| / max(|a|, floor), maximised."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(np.abs(a), floor)
    return float(np.max(np.abs(a - n) / denom))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
