"""Forward attention, with and without a transition agent.

The previous forward alignment is propagated one step (stay or advance by
one entry) and reweighted by the current softmax attention row ``y``:

    without TA:  a'_j  ~  (a_j + a_{j-1}) * y_j
    with TA:     a'_j  ~  ((1 - u) a_j + u a_{j-1}) * y_j

then renormalised.  If the unnormalised mass underflows (the propagated
alignment and ``y`` have disjoint support) the row is reset to ``y``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._common import FA_MASS_FLOOR, RejectedInput, check_same_length


@dataclass
class ForwardAttentionState:
    prev_alignment: np.ndarray
    transition_prob: np.ndarray | float | None = None


def _propagated(prev, u):
    shifted = np.zeros_like(prev)
    shifted[..., 1:] = prev[..., :-1]
    if u is None:
        return prev + shifted, shifted
    u = np.asarray(u, float)[..., None]
    return (1.0 - u) * prev + u * shifted, shifted


def forward_attention_step(state: ForwardAttentionState, softmax_row: np.ndarray,
                           use_transition_agent: bool = False,
                           floor: float = FA_MASS_FLOOR):
    """Returns ``(alignment, new_state, fallback)``.

    ``fallback`` is a boolean array over leading batch axes (a plain bool for
    a single row) marking rows that were reset to ``softmax_row``.
    """
    prev = np.asarray(state.prev_alignment, float)
    y = np.asarray(softmax_row, float)
    check_same_length(prev, y, "forward_attention_step")
    u = state.transition_prob if use_transition_agent else None
    if use_transition_agent and u is None:
        raise RejectedInput("transition agent enabled but no transition probability in state")

    pre = _propagated(prev, u)[0] * y
    total = pre.sum(axis=-1, keepdims=True)
    fallback = total < floor
    y_total = y.sum(axis=-1, keepdims=True)
    out = np.where(fallback, y / y_total, pre / np.where(fallback, 1.0, total))
    fallback = fallback[..., 0]
    if fallback.ndim == 0:
        fallback = bool(fallback)
    new_state = ForwardAttentionState(out, state.transition_prob if use_transition_agent else None)
    return out, new_state, fallback


def adjoint_forward_attention_step(prev: np.ndarray, softmax_row: np.ndarray, grad: np.ndarray,
                                   transition_prob=None, floor: float = FA_MASS_FLOOR):
    """Gradients w.r.t. ``(prev, softmax_row, transition_prob)``.

    The transition-probability gradient is ``None`` when no agent is used.
    """
    prev = np.asarray(prev, float)
    y = np.asarray(softmax_row, float)
    u = transition_prob
    mixed, shifted = _propagated(prev, u)
    pre = mixed * y
    total = pre.sum(axis=-1, keepdims=True)
    fallback = total < floor
    y_total = y.sum(axis=-1, keepdims=True)

    safe_total = np.where(fallback, 1.0, total)
    out = pre / safe_total
    g_pre = np.where(fallback, 0.0, (grad - np.sum(grad * out, axis=-1, keepdims=True)) / safe_total)
    y_norm = y / y_total
    g_y_fallback = (grad - np.sum(grad * y_norm, axis=-1, keepdims=True)) / y_total
    g_y = np.where(fallback, g_y_fallback, g_pre * mixed)

    g_mixed = g_pre * y
    if u is None:
        g_prev = g_mixed.copy()
        g_prev[..., :-1] += g_mixed[..., 1:]
        return g_prev, g_y, None
    u_arr = np.asarray(u, float)[..., None]
    g_prev = g_mixed * (1.0 - u_arr)
    g_prev[..., :-1] += g_mixed[..., 1:] * u_arr
    g_u = np.sum(g_mixed * (shifted - prev), axis=-1)
    if np.ndim(u) == 0:
        g_u = float(g_u)
    return g_prev, g_y, g_u
