"""Finite-difference oracles.

Single home for the finite-difference policy used by every checker in
the package and its test suite: central differences with relative step
1e-5, scaled per coordinate by max(1, |x_i|).
"""

from __future__ import annotations

from typing import Callable

import numpy as np

REL_STEP = 1e-5


def _steps(x: np.ndarray, rel_step: float) -> np.ndarray:
    return rel_step * np.maximum(1.0, np.abs(x))


def central_diff_gradient(f: Callable[[np.ndarray], float], x: np.ndarray,
                          rel_step: float = REL_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    h = _steps(x, rel_step)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        grad[i] = (f(x + e) - f(x - e)) / (2.0 * h[i])
    return grad


def central_diff_jacobian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                          rel_step: float = REL_STEP) -> np.ndarray:
    """Central-difference Jacobian of a vector function, shape (out, in)."""
    x = np.asarray(x, dtype=float)
    h = _steps(x, rel_step)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * h[i]))
    return np.stack(cols, axis=-1)
