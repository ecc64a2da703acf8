"""Central finite differences, the independent oracle for every adjoint."""

from __future__ import annotations

from typing import Callable

import numpy as np

FD_STEP = 1e-5


def numerical_gradient(f: Callable[[], float], x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """d f / d x by central differences; ``x`` is perturbed in place and restored."""
    grad = np.zeros_like(x, dtype=float)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        plus = f()
        flat[k] = orig - step
        minus = f()
        flat[k] = orig
        g[k] = (plus - minus) / (2.0 * step)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """max |a - n| scaled by the larger of the two gradients' max magnitude."""
    a = np.asarray(analytic, float)
    n = np.asarray(numeric, float)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
    return float(np.abs(a - n).max(initial=0.0) / scale)
