"""A small tape-based reverse-mode engine over numpy arrays.

Ops are coarse (a whole GRU cell, a whole attention kernel) to keep the
per-node Python overhead low.  Each op records its parents and a closure
mapping the output gradient to one gradient per parent; the attention ops
delegate to the kernel adjoints.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .. import kernels as K


class Var:
    __slots__ = ("value", "grad", "parents", "backward_fn")

    def __init__(self, value, parents=(), backward_fn=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn

    @property
    def shape(self):
        return np.shape(self.value)


class Tape:
    def __init__(self):
        self.nodes: list[Var] = []

    def leaf(self, value) -> Var:
        return Var(np.asarray(value, float))

    def op(self, value, parents: Sequence, backward_fn: Callable) -> Var:
        out = Var(value, tuple(parents), backward_fn)
        self.nodes.append(out)
        return out

    def backward(self, out: Var, seed=1.0) -> None:
        out.grad = np.asarray(seed, float) * np.ones_like(out.value)
        for node in reversed(self.nodes):
            if node.grad is None or node.backward_fn is None:
                continue
            grads = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None or not isinstance(parent, Var):
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g


def value(x):
    return x.value if isinstance(x, Var) else x


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementary ops -------------------------------------------------------------

def add(tape: Tape, a, b) -> Var:
    va, vb = value(a), value(b)
    return tape.op(va + vb, (a, b),
                   lambda g: (_unbroadcast(g, np.shape(va)), _unbroadcast(g, np.shape(vb))))


def linear(tape: Tape, x, W, b=None) -> Var:
    """x @ W + b over the last axis of x."""
    vx, vW = value(x), value(W)
    out = vx @ vW
    if b is not None:
        out = out + value(b)

    def back(g):
        gx = g @ vW.T
        gW = vx.reshape(-1, vx.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if b is not None else None
        return gx, gW, gb

    return tape.op(out, (x, W, b), back)


def concat(tape: Tape, parts: Sequence, axis: int = -1) -> Var:
    vals = [value(p) for p in parts]
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return tape.op(np.concatenate(vals, axis=axis), tuple(parts),
                   lambda g: tuple(np.split(g, sizes, axis=axis)))


def stack(tape: Tape, parts: Sequence, axis: int = 1) -> Var:
    vals = [value(p) for p in parts]
    n = len(vals)
    return tape.op(np.stack(vals, axis=axis), tuple(parts),
                   lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def take_rows(tape: Tape, table, ids: np.ndarray) -> Var:
    """Embedding lookup ``table[ids]``."""
    vt = value(table)

    def back(g):
        gt = np.zeros_like(vt)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, vt.shape[-1]))
        return (gt,)

    return tape.op(vt[ids], (table,), back)


def exp(tape: Tape, x) -> Var:
    out = np.exp(value(x))
    return tape.op(out, (x,), lambda g: (g * out,))


def sigmoid(tape: Tape, x) -> Var:
    out = expit(value(x))
    return tape.op(out, (x,), lambda g: (g * out * (1.0 - out),))


def select(tape: Tape, x, index, axis: int = -1) -> Var:
    """A slice ``x[..., index]`` (or ``x[..., index, :]`` etc. by axis)."""
    vx = value(x)
    sl = [slice(None)] * vx.ndim
    sl[axis] = index
    sl = tuple(sl)

    def back(g):
        gx = np.zeros_like(vx)
        gx[sl] = g
        return (gx,)

    return tape.op(vx[sl], (x,), back)


def gru_cell(tape: Tape, x, h, Wx, Wh, bx, bh) -> Var:
    """GRU update with reset gate applied to the recurrent projection."""
    vx, vh, vWx, vWh = value(x), value(h), value(Wx), value(Wh)
    H = vh.shape[-1]
    xa = vx @ vWx + value(bx)
    ha = vh @ vWh + value(bh)
    r = expit(xa[..., :H] + ha[..., :H])
    z = expit(xa[..., H:2 * H] + ha[..., H:2 * H])
    hn = ha[..., 2 * H:]
    cand = np.tanh(xa[..., 2 * H:] + r * hn)
    out = (1.0 - z) * cand + z * vh

    def back(g):
        g_cand = g * (1.0 - z)
        g_z = g * (vh - cand)
        g_npre = g_cand * (1.0 - cand ** 2)
        g_r = g_npre * hn
        g_rpre = g_r * r * (1.0 - r)
        g_zpre = g_z * z * (1.0 - z)
        g_xa = np.concatenate([g_rpre, g_zpre, g_npre], axis=-1)
        g_ha = np.concatenate([g_rpre, g_zpre, g_npre * r], axis=-1)
        g_x = g_xa @ vWx.T
        g_h = g_ha @ vWh.T + g * z
        return (g_x, g_h,
                vx.reshape(-1, vx.shape[-1]).T @ g_xa.reshape(-1, 3 * H),
                vh.reshape(-1, H).T @ g_ha.reshape(-1, 3 * H),
                g_xa.reshape(-1, 3 * H).sum(axis=0),
                g_ha.reshape(-1, 3 * H).sum(axis=0))

    return tape.op(out, (x, h, Wx, Wh, bx, bh), back)


# -- losses ---------------------------------------------------------------------

def masked_mse(tape: Tape, pred, target: np.ndarray, mask: np.ndarray) -> Var:
    """Mean squared error over the unmasked (..., F) frames."""
    vp = value(pred)
    denom = mask.sum() * vp.shape[-1]
    diff = (vp - target) * mask[..., None]
    return tape.op(np.sum(diff ** 2) / denom, (pred,), lambda g: (g * 2.0 * diff / denom,))


def masked_bce_logits(tape: Tape, logits, target: np.ndarray, mask: np.ndarray) -> Var:
    vl = value(logits)
    denom = mask.sum()
    loss = np.logaddexp(0.0, vl) - target * vl
    return tape.op(np.sum(loss * mask) / denom, (logits,),
                   lambda g: (g * (expit(vl) - target) * mask / denom,))


# -- attention kernels ----------------------------------------------------------

def energy(tape: Tape, query, memory, Wq, Wk, hb, v, gain, bias, noise_scale: float,
           location=None, Wl=None, training: bool = False, rng=None) -> Var:
    params = K.EnergyParams(value(Wq), value(Wk), value(hb), value(v), float(value(gain)),
                            float(value(bias)), noise_scale,
                            value(Wl) if Wl is not None else None)
    vq, vm = value(query), value(memory)
    vloc = value(location) if location is not None else None
    out = K.compute_energy(vq, vm, params, location=vloc, training=training, rng=rng)

    def back(g):
        gr = K.adjoint_energy(vq, vm, params, g, location=vloc)
        return (gr.query, gr.memory, gr.query_weight, gr.key_weight, gr.hidden_bias,
                gr.direction, np.asarray(gr.gain), np.asarray(gr.bias), gr.location,
                gr.location_weight)

    return tape.op(out, (query, memory, Wq, Wk, hb, v, gain, bias, location, Wl), back)


def softmax(tape: Tape, e) -> Var:
    ve = value(e)
    return tape.op(K.softmax_alignment(ve), (e,), lambda g: (K.adjoint_softmax_alignment(ve, g),))


def context(tape: Tape, alignment, memory) -> Var:
    va, vm = value(alignment), value(memory)
    return tape.op(K.context_vector(va, vm), (alignment, memory),
                   lambda g: K.adjoint_context_vector(va, vm, g))


def location_features(tape: Tape, prev, filters) -> Var:
    vp, vf = value(prev), value(filters)
    return tape.op(K.location_features(vp, vf), (prev, filters),
                   lambda g: K.adjoint_location_features(vp, vf, g))


def selection_probabilities(tape: Tape, e) -> Var:
    ve = value(e)
    return tape.op(K.selection_probabilities(ve), (e,),
                   lambda g: (K.adjoint_selection_probabilities(ve, g),))


def ma_alignment(tape: Tape, prev, p) -> Var:
    vprev, vp = value(prev), value(p)
    return tape.op(K.ma_alignment_recursive(vprev, vp), (prev, p),
                   lambda g: K.adjoint_ma_alignment_recursive(vprev, vp, g))


def sma_alignment(tape: Tape, prev, p, edge_policy: str) -> Var:
    vprev, vp = value(prev), value(p)
    return tape.op(K.sma_alignment(vprev, vp, edge_policy), (prev, p),
                   lambda g: K.adjoint_sma_alignment(vprev, vp, g, edge_policy))


def forward_attention(tape: Tape, prev, y, u=None) -> tuple[Var, np.ndarray]:
    vprev, vy = value(prev), value(y)
    vu = value(u)[..., 0] if u is not None else None
    state = K.ForwardAttentionState(vprev, vu)
    out, _, fallback = K.forward_attention_step(state, vy, use_transition_agent=u is not None)

    def back(g):
        gp, gy, gu = K.adjoint_forward_attention_step(vprev, vy, g, vu)
        return gp, gy, (gu[..., None] if gu is not None else None)

    return tape.op(out, (prev, y, u), back), np.asarray(fallback)


def gmm_attention(tape: Tape, centers, raw, n: int, normalize: bool) -> tuple[Var, Var]:
    """``raw`` is ``(..., 3K)``: weight logits, shift logits, log widths.

    Returns the alignment row and the new centres as separate nodes so the
    centres can feed the next step.
    """
    vc, vr = value(centers), value(raw)
    Kc = vc.shape[-1]
    upd = K.GmmUpdates(vr[..., :Kc], vr[..., Kc:2 * Kc], vr[..., 2 * Kc:])
    row, new_state = K.gmm_attention_step(K.GmmAttentionState(None, vc, None), upd, n, normalize)
    joint = tape.op(np.concatenate([row, new_state.centers], axis=-1), (centers, raw),
                    lambda g: _gmm_back(vc, upd, n, normalize, g))
    return select(tape, joint, slice(0, n)), select(tape, joint, slice(n, n + Kc))


def _gmm_back(vc, upd, n, normalize, g):
    gc, gu = K.adjoint_gmm_attention_step(vc, upd, n, g[..., :n], g[..., n:], normalize)
    return gc, np.concatenate([gu.raw_weights, gu.raw_shift, gu.raw_widths], axis=-1)
