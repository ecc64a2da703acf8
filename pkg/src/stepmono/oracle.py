"""Ground-truth marginals for the hard MA/SMA processes.

Exact marginals come from propagating a distribution over ``n + 1`` states
(the memory entries plus an absorbing past-end state) through explicit
per-step transition matrices built from the process definitions.  This path
is deliberately independent of the kernel recursions it checks.  A literal
path-listing mode enumerates every hard path with its probability and is
the cross-check for the matrix propagation on small sizes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .hard_decoder import empirical_marginals, sample_paths
from .kernels import RejectedInput
from .kernels._common import check_edge_policy

STEPWISE_LIMIT = 12
MONOTONIC_LIMIT = 8
LISTING_LIMIT = 6


@dataclass
class Marginals:
    alignment: np.ndarray  # (T, n)
    leak: np.ndarray  # (T,), cumulative probability of having left the memory


@dataclass
class PathEnumeration:
    paths: list[tuple[int, ...]]  # PAST_END (-1) entries mark runs that left the memory
    probabilities: np.ndarray
    family: str


def _guard(p, limit):
    p = np.asarray(p, float)
    if p.ndim != 2:
        raise RejectedInput("p must be a (T, n) matrix")
    T, n = p.shape
    if T > limit or n > limit:
        raise RejectedInput(f"enumeration limited to T, n <= {limit}; got T={T}, n={n}")
    if T < 1 or n < 1:
        raise RejectedInput("p must be non-empty")
    return p


def stepwise_transition(p_row: np.ndarray, edge_policy: str) -> np.ndarray:
    n = len(p_row)
    M = np.zeros((n + 1, n + 1))
    for j in range(n):
        M[j, j] += p_row[j]
        if j + 1 < n:
            M[j, j + 1] += 1.0 - p_row[j]
        elif edge_policy == "clamp":
            M[j, j] += 1.0 - p_row[j]
        else:
            M[j, n] += 1.0 - p_row[j]
    M[n, n] = 1.0
    return M


def monotonic_transition(p_row: np.ndarray) -> np.ndarray:
    n = len(p_row)
    M = np.zeros((n + 1, n + 1))
    for start in range(n):
        survive = 1.0
        for j in range(start, n):
            M[start, j] = survive * p_row[j]
            survive *= 1.0 - p_row[j]
        M[start, n] = survive
    M[n, n] = 1.0
    return M


def _propagate(transitions, initial):
    dist = np.append(initial, 0.0)
    rows, leak = [], []
    for M in transitions:
        dist = dist @ M
        rows.append(dist[:-1])
        leak.append(dist[-1])
    return Marginals(np.array(rows), np.array(leak))


def _initial(n, initial):
    if initial is None:
        initial = np.zeros(n)
        initial[0] = 1.0
    return np.asarray(initial, float)


def enumerate_stepwise(p: np.ndarray, edge_policy: str = "leak",
                       initial: np.ndarray | None = None) -> Marginals:
    """Exact per-step SMA marginals for T, n <= 12, one decision per row."""
    check_edge_policy(edge_policy)
    p = _guard(p, STEPWISE_LIMIT)
    init = _initial(p.shape[1], initial)
    return _propagate([stepwise_transition(row, edge_policy) for row in p], init)


def enumerate_monotonic(p: np.ndarray, initial: np.ndarray | None = None) -> Marginals:
    """Exact per-step MA marginals for T, n <= 8."""
    p = _guard(p, MONOTONIC_LIMIT)
    init = _initial(p.shape[1], initial)
    return _propagate([monotonic_transition(row) for row in p], init)


def list_paths(p: np.ndarray, family: str, edge_policy: str = "leak") -> PathEnumeration:
    """Every hard path from focus 0 with its probability (T, n <= 6)."""
    p = _guard(p, LISTING_LIMIT)
    T, n = p.shape
    paths, probs = [], []
    if family == "sma":
        check_edge_policy(edge_policy)
        for decisions in itertools.product((True, False), repeat=T):  # True = stay
            pos, prob, path = 0, 1.0, []
            for t, stay in enumerate(decisions):
                if pos < 0:
                    path.append(-1)
                    continue
                prob *= p[t, pos] if stay else 1.0 - p[t, pos]
                if not stay:
                    pos = pos + 1 if pos + 1 < n else (pos if edge_policy == "clamp" else -1)
                path.append(pos)
            paths.append(tuple(path))
            probs.append(prob)
    elif family == "ma":
        for outcome in itertools.product(range(-1, n), repeat=T):
            pos, prob = 0, 1.0
            for t, stop in enumerate(outcome):
                if pos < 0:
                    if stop != -1:
                        prob = 0.0
                    continue
                if stop == -1:
                    prob *= np.prod(1.0 - p[t, pos:])
                elif stop < pos:
                    prob = 0.0
                else:
                    prob *= np.prod(1.0 - p[t, pos:stop]) * p[t, stop]
                pos = stop
                if prob == 0.0:
                    break
            if prob > 0.0:
                paths.append(outcome)
                probs.append(prob)
    else:
        raise RejectedInput(f"unknown family {family!r}")
    return PathEnumeration(paths, np.array(probs), family)


def marginals_from_paths(enum: PathEnumeration, n: int) -> Marginals:
    T = len(enum.paths[0])
    alignment = np.zeros((T, n))
    leak = np.zeros(T)
    for path, prob in zip(enum.paths, enum.probabilities):
        for t, j in enumerate(path):
            if j < 0:
                leak[t] += prob
            else:
                alignment[t, j] += prob
    return Marginals(alignment, leak)


def monte_carlo(p: np.ndarray, family: str, samples: int, seed: int,
                edge_policy: str = "leak", mode: str = "sampled") -> Marginals:
    """Empirical marginals from ``samples`` vectorised hard-decoder runs."""
    if samples < 1:
        raise RejectedInput("samples must be >= 1")
    p = np.asarray(p, float)
    paths = sample_paths(p, samples, family, mode=mode, rng=np.random.default_rng(seed),
                         edge_policy=edge_policy)
    alignment, leak = empirical_marginals(paths, p.shape[1])
    return Marginals(alignment, leak)


def total_variation(a: Marginals, b: Marginals) -> np.ndarray:
    """Per-step TV distance over the ``n + 1`` outcomes (entries + past-end)."""
    diff = np.abs(a.alignment - b.alignment).sum(axis=1) + np.abs(a.leak - b.leak)
    return 0.5 * diff
