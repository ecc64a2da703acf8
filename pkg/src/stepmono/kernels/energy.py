"""Additive attention energies, softmax normalisation and context vectors.

The energy function is Bahdanau-style additive attention with a
weight-normalised scoring vector, a scalar gain and a trainable score bias:

    e_j = gain * <v / |v|, tanh(W_q h + W_k x_j + W_l f_j + b)> + bias

``f_j`` are optional location features (location-sensitive attention).
During training, Gaussian noise of std ``noise_scale`` may be added to the
energies before the sigmoid (monotonic mechanisms only).

All functions accept arbitrary leading batch dimensions: queries are
``(..., dq)``, memories ``(..., n, dk)`` and energy rows ``(..., n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._common import RejectedInput

_NORM_FLOOR = 1e-12


@dataclass
class EnergyParams:
    query_weight: np.ndarray  # (a, dq)
    key_weight: np.ndarray  # (a, dk)
    hidden_bias: np.ndarray  # (a,)
    direction: np.ndarray  # (a,), weight-normalised before use
    gain: float = 1.0
    bias: float = 0.0
    noise_scale: float = 0.0
    location_weight: np.ndarray | None = None  # (a, F)

    def __post_init__(self):
        if not self.gain > 0:
            raise RejectedInput(f"gain must be positive, got {self.gain}")
        if self.noise_scale < 0:
            raise RejectedInput(f"noise_scale must be nonnegative, got {self.noise_scale}")

    @property
    def attention_dim(self) -> int:
        return self.direction.shape[0]

    def unit_direction(self) -> np.ndarray:
        return self.direction / max(np.linalg.norm(self.direction), _NORM_FLOOR)

    @classmethod
    def init(cls, rng: np.random.Generator, query_dim: int, key_dim: int, attention_dim: int,
             location_dim: int = 0, bias: float = 0.0, noise_scale: float = 0.0) -> "EnergyParams":
        """Random initialisation with gain 1/sqrt(attention_dim)."""
        def glorot(rows, cols):
            return rng.uniform(-1, 1, (rows, cols)) * np.sqrt(6.0 / (rows + cols))

        return cls(
            query_weight=glorot(attention_dim, query_dim),
            key_weight=glorot(attention_dim, key_dim),
            hidden_bias=np.zeros(attention_dim),
            direction=rng.normal(0.0, 1.0, attention_dim),
            gain=1.0 / np.sqrt(attention_dim),
            bias=bias,
            noise_scale=noise_scale,
            location_weight=glorot(attention_dim, location_dim) if location_dim else None,
        )


@dataclass
class EnergyGrads:
    query: np.ndarray
    memory: np.ndarray
    query_weight: np.ndarray
    key_weight: np.ndarray
    hidden_bias: np.ndarray
    direction: np.ndarray
    gain: float
    bias: float
    location: np.ndarray | None = None
    location_weight: np.ndarray | None = field(default=None)


def _check_energy_inputs(query, memory, params, location):
    if memory.ndim < 2 or memory.shape[-2] < 1:
        raise RejectedInput("memory must have at least one entry")
    if query.shape[-1] != params.query_weight.shape[1]:
        raise RejectedInput(
            f"query dim {query.shape[-1]} != query projection dim {params.query_weight.shape[1]}")
    if memory.shape[-1] != params.key_weight.shape[1]:
        raise RejectedInput(
            f"memory dim {memory.shape[-1]} != key projection dim {params.key_weight.shape[1]}")
    if location is not None:
        if params.location_weight is None:
            raise RejectedInput("location features given but params have no location projection")
        if location.shape[-2] != memory.shape[-2]:
            raise RejectedInput("location features must have one row per memory entry")
        if location.shape[-1] != params.location_weight.shape[1]:
            raise RejectedInput("location feature width does not match location projection")


def _outer_sum(a, b):
    """sum over all leading axes of a[..., i] * b[..., j]."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def _hidden(query, memory, params, location):
    pre = (query @ params.query_weight.T)[..., None, :] + memory @ params.key_weight.T
    pre = pre + params.hidden_bias
    if location is not None:
        pre = pre + location @ params.location_weight.T
    return np.tanh(pre)


def compute_energy(query: np.ndarray, memory: np.ndarray, params: EnergyParams,
                   location: np.ndarray | None = None, training: bool = False,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Energy row e_{i,1..n} for one decoder query.

    Noise is drawn only when ``training`` is set and ``noise_scale > 0``; in
    that case ``rng`` is mandatory so the result is reproducible.
    """
    query = np.asarray(query, dtype=float)
    memory = np.asarray(memory, dtype=float)
    _check_energy_inputs(query, memory, params, location)
    noisy = training and params.noise_scale > 0
    if noisy and rng is None:
        raise RejectedInput("a seeded rng is required for noisy training energies")

    act = _hidden(query, memory, params, location)
    energies = params.gain * (act @ params.unit_direction()) + params.bias
    if noisy:
        energies = energies + params.noise_scale * rng.standard_normal(energies.shape)
    return energies


def adjoint_energy(query: np.ndarray, memory: np.ndarray, params: EnergyParams,
                   grad: np.ndarray, location: np.ndarray | None = None) -> EnergyGrads:
    """Reverse-mode derivatives of :func:`compute_energy`.

    Additive noise has unit derivative, so the noisy and noise-free energies
    share this adjoint.
    """
    act = _hidden(query, memory, params, location)
    norm = max(np.linalg.norm(params.direction), _NORM_FLOOR)
    unit = params.direction / norm

    g_unit = params.gain * (grad.reshape(-1) @ act.reshape(-1, act.shape[-1]))
    g_pre = (grad[..., None] * (params.gain * unit)) * (1.0 - act ** 2)
    g_pre_q = g_pre.sum(axis=-2)

    out = EnergyGrads(
        query=g_pre_q @ params.query_weight,
        memory=g_pre @ params.key_weight,
        query_weight=_outer_sum(g_pre_q, np.broadcast_to(query, g_pre_q.shape[:-1] + query.shape[-1:])),
        key_weight=_outer_sum(g_pre, np.broadcast_to(memory, g_pre.shape[:-1] + memory.shape[-1:])),
        hidden_bias=g_pre.reshape(-1, g_pre.shape[-1]).sum(axis=0),
        direction=(g_unit - unit * (unit @ g_unit)) / norm,
        gain=float(np.sum(grad * (act @ unit))),
        bias=float(np.sum(grad)),
    )
    if location is not None:
        out.location = g_pre @ params.location_weight
        out.location_weight = _outer_sum(g_pre, location)
    return out


def softmax_alignment(energies: np.ndarray) -> np.ndarray:
    shifted = energies - energies.max(axis=-1, keepdims=True)
    w = np.exp(shifted)
    return w / w.sum(axis=-1, keepdims=True)


def adjoint_softmax_alignment(energies: np.ndarray, grad: np.ndarray) -> np.ndarray:
    a = softmax_alignment(energies)
    return a * (grad - np.sum(grad * a, axis=-1, keepdims=True))


def context_vector(alignment: np.ndarray, memory: np.ndarray) -> np.ndarray:
    """Alignment-weighted sum of memory rows, ``(..., n) x (..., n, d) -> (..., d)``."""
    if alignment.shape[-1] != memory.shape[-2]:
        raise RejectedInput(
            f"alignment length {alignment.shape[-1]} != memory length {memory.shape[-2]}")
    return np.einsum("...n,...nd->...d", alignment, memory)


def adjoint_context_vector(alignment: np.ndarray, memory: np.ndarray,
                           grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    g_alignment = np.einsum("...d,...nd->...n", grad, memory)
    g_memory = alignment[..., :, None] * grad[..., None, :]
    return g_alignment, g_memory


def location_features(prev: np.ndarray, filters: np.ndarray) -> np.ndarray:
    """Same-padded 1-D correlation of the previous alignment with each filter.

    ``prev`` is ``(..., n)``, ``filters`` is ``(F, W)`` with odd ``W``; the
    result is ``(..., n, F)``.
    """
    width = filters.shape[-1]
    if width % 2 == 0:
        raise RejectedInput(f"filter width must be odd, got {width}")
    half = width // 2
    pad = [(0, 0)] * (prev.ndim - 1) + [(half, half)]
    windows = np.lib.stride_tricks.sliding_window_view(np.pad(prev, pad), width, axis=-1)
    return windows @ filters.T


def adjoint_location_features(prev: np.ndarray, filters: np.ndarray,
                              grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    width = filters.shape[-1]
    half = width // 2
    n = prev.shape[-1]
    pad = [(0, 0)] * (prev.ndim - 1) + [(half, half)]
    windows = np.lib.stride_tricks.sliding_window_view(np.pad(prev, pad), width, axis=-1)
    g_filters = _outer_sum(grad, windows)
    g_windows = grad @ filters
    g_padded = np.zeros(prev.shape[:-1] + (n + 2 * half,))
    for k in range(width):
        g_padded[..., k:k + n] += g_windows[..., k]
    return g_padded[..., half:half + n], g_filters


def check_memory(memory: np.ndarray) -> None:
    memory = np.asarray(memory)
    if memory.ndim < 2 or memory.shape[-2] < 1:
        raise RejectedInput("memory must be an (n, d) array with n >= 1")
    if not np.all(np.isfinite(memory)):
        raise RejectedInput("memory entries must be finite")


__all__ = [
    "EnergyParams", "EnergyGrads", "check_memory", "compute_energy", "adjoint_energy",
    "softmax_alignment", "adjoint_softmax_alignment",
    "context_vector", "adjoint_context_vector",
    "location_features", "adjoint_location_features",
]

