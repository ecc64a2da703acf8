"""Graves-style Gaussian mixture attention.

Each decoder step emits raw per-component values (weight logits, centre
shift, log width).  Centres only move forward: the shift is exp(raw) >= 0.

    alpha_j = sum_k w_k exp(-beta_k (kappa_k - j)^2),   j = 1..n

Weights are a softmax over components; rows are left unnormalised unless
``normalize`` is set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_COMPONENTS = 20
_ROW_FLOOR = 1e-300


@dataclass
class GmmAttentionState:
    weights: np.ndarray
    centers: np.ndarray
    widths: np.ndarray

    @classmethod
    def initial(cls, components: int = DEFAULT_COMPONENTS, batch_shape: tuple = ()) -> "GmmAttentionState":
        shape = batch_shape + (components,)
        return cls(np.full(shape, 1.0 / components), np.zeros(shape), np.ones(shape))


@dataclass
class GmmUpdates:
    raw_weights: np.ndarray
    raw_shift: np.ndarray
    raw_widths: np.ndarray


def _softmax(x):
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _components(prev_centers, updates, n):
    weights = _softmax(np.asarray(updates.raw_weights, float))
    centers = prev_centers + np.exp(updates.raw_shift)
    widths = np.exp(updates.raw_widths)
    offsets = centers[..., :, None] - np.arange(1, n + 1)
    phi = np.exp(-widths[..., :, None] * offsets ** 2)
    return weights, centers, widths, offsets, phi


def gmm_attention_step(state: GmmAttentionState, updates: GmmUpdates, n: int,
                       normalize: bool = False) -> tuple[np.ndarray, GmmAttentionState]:
    weights, centers, widths, _, phi = _components(state.centers, updates, n)
    row = np.einsum("...k,...kn->...n", weights, phi)
    if normalize:
        row = row / np.maximum(row.sum(axis=-1, keepdims=True), _ROW_FLOOR)
    return row, GmmAttentionState(weights, centers, widths)


def adjoint_gmm_attention_step(prev_centers: np.ndarray, updates: GmmUpdates, n: int,
                               grad_row: np.ndarray, grad_centers: np.ndarray | None = None,
                               normalize: bool = False):
    """Gradients ``(prev_centers, GmmUpdates)`` given upstream gradients on
    the row and, optionally, on the new centres (which feed the next step)."""
    weights, centers, widths, offsets, phi = _components(prev_centers, updates, n)
    raw_row = np.einsum("...k,...kn->...n", weights, phi)
    g_raw_row = grad_row
    if normalize:
        total = np.maximum(raw_row.sum(axis=-1, keepdims=True), _ROW_FLOOR)
        out = raw_row / total
        g_raw_row = (grad_row - np.sum(grad_row * out, axis=-1, keepdims=True)) / total

    g_weights = np.einsum("...n,...kn->...k", g_raw_row, phi)
    g_phi_phi = weights[..., :, None] * g_raw_row[..., None, :] * phi
    g_widths = -np.sum(g_phi_phi * offsets ** 2, axis=-1)
    g_centers = -2.0 * np.sum(g_phi_phi * widths[..., :, None] * offsets, axis=-1)
    if grad_centers is not None:
        g_centers = g_centers + grad_centers

    g_updates = GmmUpdates(
        raw_weights=weights * (g_weights - np.sum(g_weights * weights, axis=-1, keepdims=True)),
        raw_shift=g_centers * np.exp(updates.raw_shift),
        raw_widths=g_widths * widths,
    )
    return g_centers, g_updates
