"""Sigmoid selection probabilities, monotonic attention (MA) and stepwise
monotonic attention (SMA) expected-alignment updates.

Rows live on the last axis; any leading axes are treated as a batch.

MA: starting from the previous attended entry the scan stops at j with
probability p_j, otherwise moves on; mass that never stops leaks past the
end.  SMA: the focus either stays (probability p_j) or moves exactly one
entry forward (probability 1 - p_j).
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ._common import EPS_DENOM, EPS_PROB, check_edge_policy, check_same_length


def selection_probabilities(energies: np.ndarray, eps: float = EPS_PROB) -> np.ndarray:
    return np.clip(expit(energies), eps, 1.0 - eps)


def adjoint_selection_probabilities(energies: np.ndarray, grad: np.ndarray,
                                    eps: float = EPS_PROB) -> np.ndarray:
    p = expit(energies)
    inside = (p > eps) & (p < 1.0 - eps)
    return np.where(inside, grad * p * (1.0 - p), 0.0)


# -- monotonic attention ---------------------------------------------------

def ma_alignment_recursive(prev: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Expected MA alignment, division-free recursion.

    With q_j = alpha_j / p_j the update reads

        q_1 = prev_1,   q_j = (1 - p_{j-1}) q_{j-1} + prev_j,   alpha_j = p_j q_j

    which is the stop-at-j probability without ever dividing by p.
    """
    check_same_length(prev, p, "ma_alignment_recursive")
    prev, p = np.broadcast_arrays(np.asarray(prev, float), np.asarray(p, float))
    q = np.empty_like(prev)
    q[..., 0] = prev[..., 0]
    for j in range(1, prev.shape[-1]):
        q[..., j] = (1.0 - p[..., j - 1]) * q[..., j - 1] + prev[..., j]
    return p * q


def adjoint_ma_alignment_recursive(prev: np.ndarray, p: np.ndarray,
                                   grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    prev, p, grad = np.broadcast_arrays(np.asarray(prev, float), np.asarray(p, float), grad)
    n = prev.shape[-1]
    q = ma_alignment_recursive(prev, p) / p
    g_q = np.empty_like(prev)
    g_p = np.empty_like(prev)
    g_q[..., n - 1] = grad[..., n - 1] * p[..., n - 1]
    g_p[..., n - 1] = grad[..., n - 1] * q[..., n - 1]
    for j in range(n - 2, -1, -1):
        g_q[..., j] = grad[..., j] * p[..., j] + g_q[..., j + 1] * (1.0 - p[..., j])
        g_p[..., j] = grad[..., j] * q[..., j] - g_q[..., j + 1] * q[..., j]
    return g_q, g_p


def _exclusive_cumprod(x: np.ndarray) -> np.ndarray:
    out = np.ones_like(x)
    out[..., 1:] = np.cumprod(x[..., :-1], axis=-1)
    return out


def ma_alignment_parallel(prev: np.ndarray, p: np.ndarray,
                          eps_denom: float = EPS_DENOM) -> tuple[np.ndarray, bool]:
    """Vectorised MA update, ``p * cumprod(1-p) * cumsum(prev / cumprod(1-p))``.

    The cumprod is exclusive and its values are floored at ``eps_denom``.
    Returns the alignment and whether any denominator was floored; in that
    case the result may deviate from :func:`ma_alignment_recursive`.
    """
    check_same_length(prev, p, "ma_alignment_parallel")
    prev, p = np.broadcast_arrays(np.asarray(prev, float), np.asarray(p, float))
    cp = _exclusive_cumprod(1.0 - p)
    clamped = bool(np.any(cp < eps_denom))
    denom = np.maximum(cp, eps_denom)
    alpha = p * cp * np.cumsum(prev / denom, axis=-1)
    return alpha, clamped


def adjoint_ma_alignment_parallel(prev: np.ndarray, p: np.ndarray, grad: np.ndarray,
                                  eps_denom: float = EPS_DENOM) -> tuple[np.ndarray, np.ndarray]:
    prev, p, grad = np.broadcast_arrays(np.asarray(prev, float), np.asarray(p, float), grad)
    cp = _exclusive_cumprod(1.0 - p)
    denom = np.maximum(cp, eps_denom)
    s = np.cumsum(prev / denom, axis=-1)

    g_s = grad * p * cp
    g_ratio = np.flip(np.cumsum(np.flip(g_s, -1), axis=-1), -1)
    g_prev = g_ratio / denom
    g_cp = grad * p * s - np.where(cp >= eps_denom, g_ratio * prev / denom ** 2, 0.0)
    # cp_j = prod_{k<j} (1 - p_k)  =>  d cp_j / d p_k = -cp_j / (1 - p_k), k < j
    weighted = g_cp * cp
    tail = np.flip(np.cumsum(np.flip(weighted, -1), axis=-1), -1)
    exclusive_tail = np.zeros_like(tail)
    exclusive_tail[..., :-1] = tail[..., 1:]
    g_p = grad * cp * s - exclusive_tail / (1.0 - p)
    return g_prev, g_p


# -- stepwise monotonic attention -------------------------------------------

def _effective_stay(p: np.ndarray, edge_policy: str) -> np.ndarray:
    if edge_policy == "clamp":
        p = p.copy()
        p[..., -1] = 1.0
    return p


def sma_alignment(prev: np.ndarray, p: np.ndarray, edge_policy: str = "leak") -> np.ndarray:
    """One SMA step: alpha_j = prev_j p_j + prev_{j-1} (1 - p_{j-1}).

    Under ``leak`` the mass prev_n (1 - p_n) moving past the last entry is
    lost; under ``clamp`` the last entry's stay probability is forced to 1.
    """
    check_edge_policy(edge_policy)
    check_same_length(prev, p, "sma_alignment")
    prev, p = np.broadcast_arrays(np.asarray(prev, float), np.asarray(p, float))
    stay = _effective_stay(p, edge_policy)
    out = prev * stay
    out[..., 1:] += prev[..., :-1] * (1.0 - stay[..., :-1])
    return out


def adjoint_sma_alignment(prev: np.ndarray, p: np.ndarray, grad: np.ndarray,
                          edge_policy: str = "leak") -> tuple[np.ndarray, np.ndarray]:
    prev, p, grad = np.broadcast_arrays(np.asarray(prev, float), np.asarray(p, float), grad)
    stay = _effective_stay(p, edge_policy)
    g_prev = grad * stay
    g_prev[..., :-1] += grad[..., 1:] * (1.0 - stay[..., :-1])
    g_p = grad * prev
    g_p[..., :-1] -= grad[..., 1:] * prev[..., :-1]
    if edge_policy == "clamp":
        g_p[..., -1] = 0.0
    return g_prev, g_p


def sma_leak(prev: np.ndarray, p: np.ndarray, edge_policy: str = "leak") -> np.ndarray:
    """Mass leaving past the end on one SMA step (zero under clamp)."""
    if edge_policy == "clamp":
        return np.zeros(np.shape(prev)[:-1])
    return prev[..., -1] * (1.0 - p[..., -1])


def iterate(step, p_matrix: np.ndarray, initial: np.ndarray | None = None, **kwargs) -> np.ndarray:
    """Apply ``step(prev, p_row)`` once per row of ``p_matrix``.

    ``initial`` defaults to a one-hot focus on the first entry.  Returns the
    ``(T, n)`` matrix of rows after each step (the initial row excluded).
    """
    p_matrix = np.asarray(p_matrix, float)
    if initial is None:
        initial = np.zeros(p_matrix.shape[-1])
        initial[0] = 1.0
    rows = []
    prev = initial
    for p_row in p_matrix:
        out = step(prev, p_row, **kwargs)
        prev = out[0] if isinstance(out, tuple) else out
        rows.append(prev)
    return np.array(rows)
