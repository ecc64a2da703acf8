"""Hard (single-entry) attention inference for MA and SMA.

Indices are 0-based throughout.  A hard process starts focused on entry 0.

* MA: scan forward from the previous index, stopping at the first entry
  whose Bernoulli(p_j) draw is positive (greedy: first p_j >= 0.5).  If no
  entry stops, the focus runs past the end of the memory.
* SMA: stay on the current entry with probability p (greedy: p >= 0.5),
  otherwise advance by exactly one.  At the last entry ``clamp`` stays put,
  ``leak`` runs past the end.

Past-end is reported as ``None`` by the scalar step functions and as
``PAST_END`` (-1) in vectorised path arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .kernels import RejectedInput, check_memory
from .kernels._common import check_edge_policy

GREEDY_THRESHOLD = 0.5
PAST_END = -1

Family = Literal["ma", "sma"]


@dataclass(frozen=True)
class SamplerConfig:
    mode: Literal["sampled", "greedy"] = "sampled"
    seed: int = 0
    max_steps: int = 1000

    def __post_init__(self):
        if self.mode not in ("sampled", "greedy"):
            raise RejectedInput(f"unknown sampler mode {self.mode!r}")
        if self.max_steps < 1:
            raise RejectedInput("max_steps must be positive")


@dataclass
class HardAlignmentPath:
    positions: np.ndarray
    terminated_past_end: bool = False
    truncated: bool = False

    def __len__(self):
        return len(self.positions)

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.positions) >= 0))

    def is_stepwise(self) -> bool:
        """Increments in {0, 1}, starting at entry 0."""
        pos = self.positions
        if len(pos) == 0:
            return True
        return pos[0] == 0 and bool(np.all(np.isin(np.diff(pos), (0, 1))))

    def has_prefix_coverage(self) -> bool:
        """Visited entries are exactly {0, ..., max(path)}."""
        if len(self.positions) == 0:
            return True
        visited = np.unique(self.positions)
        return bool(np.array_equal(visited, np.arange(visited[-1] + 1)))


@dataclass
class HardDecodeResult:
    path: HardAlignmentPath
    contexts: np.ndarray
    stopped: bool = False
    extras: dict = field(default_factory=dict)


def _stops(p, mode, rng):
    if mode == "greedy":
        return p >= GREEDY_THRESHOLD
    return rng.random() < p


def ma_hard_step(start: int, p_row: np.ndarray, sampler: SamplerConfig,
                 rng: np.random.Generator | None = None) -> int | None:
    n = len(p_row)
    if not 0 <= start < n:
        raise RejectedInput(f"start index {start} outside [0, {n})")
    for j in range(start, n):
        if _stops(p_row[j], sampler.mode, rng):
            return j
    return None


def sma_hard_step(current: int, p_value: float, n: int, sampler: SamplerConfig,
                  rng: np.random.Generator | None = None, edge_policy: str = "clamp") -> int | None:
    check_edge_policy(edge_policy)
    if not 0 <= current < n:
        raise RejectedInput(f"current index {current} outside [0, {n})")
    if _stops(p_value, sampler.mode, rng):
        return current
    if current + 1 < n:
        return current + 1
    return current if edge_policy == "clamp" else None


def decode_hard(memory: np.ndarray, step_fn: Callable[[int, int], np.ndarray | None],
                sampler: SamplerConfig, family: Family = "sma", edge_policy: str = "clamp",
                on_attend: Callable[[int, int, np.ndarray], bool] | None = None,
                rng: np.random.Generator | None = None) -> HardDecodeResult:
    """Autoregressive hard decoding.

    ``step_fn(step, prev_index)`` returns the selection-probability row for
    the step, or ``None`` to stop.  ``on_attend(step, index, context)`` is
    told the chosen entry and may return True to stop (e.g. a stop flag).

    For SMA the first frame attends the initial focus (entry 0) and stay/move
    decisions start from the second frame, so every SMA path begins at 0.
    For MA the first frame already scans from entry 0.
    """
    check_memory(memory)
    if family not in ("ma", "sma"):
        raise RejectedInput(f"unknown family {family!r}")
    n = memory.shape[0]
    rng = rng if rng is not None else np.random.default_rng(sampler.seed)

    positions: list[int] = []
    past_end = stopped = False
    prev = 0
    for step in range(sampler.max_steps):
        p_row = step_fn(step, prev)
        if p_row is None:
            stopped = True
            break
        if family == "ma":
            index = ma_hard_step(prev, p_row, sampler, rng)
        elif step == 0:
            index = 0
        else:
            index = sma_hard_step(prev, p_row[prev], n, sampler, rng, edge_policy)
        if index is None:
            past_end = True
            break
        positions.append(index)
        prev = index
        if on_attend is not None and on_attend(step, index, memory[index]):
            stopped = True
            break

    pos = np.array(positions, dtype=int)
    path = HardAlignmentPath(pos, terminated_past_end=past_end,
                             truncated=not (stopped or past_end))
    contexts = memory[pos] if len(pos) else np.zeros((0, memory.shape[1]))
    return HardDecodeResult(path, contexts, stopped=stopped)


# -- vectorised sampling over many independent runs ---------------------------

def _draws(p_row, shape, mode, rng):
    if mode == "greedy":
        return np.broadcast_to(p_row >= GREEDY_THRESHOLD, shape)
    return rng.random(shape) < p_row


def sample_paths(p_matrix: np.ndarray, samples: int, family: Family, mode: str = "sampled",
                 rng: np.random.Generator | None = None, edge_policy: str = "leak",
                 start: int = 0) -> np.ndarray:
    """Run ``samples`` independent hard processes against a frozen ``(T, n)``
    probability matrix; every row applies one decision starting from focus
    ``start``.  Returns ``(samples, T)`` indices with ``PAST_END`` once a run
    has left the memory."""
    check_edge_policy(edge_policy)
    p_matrix = np.asarray(p_matrix, float)
    T, n = p_matrix.shape
    rng = rng if rng is not None else np.random.default_rng()
    cur = np.full(samples, start, dtype=int)
    out = np.empty((samples, T), dtype=int)
    cols = np.arange(n)
    for t in range(T):
        alive = cur != PAST_END
        if family == "ma":
            z = _draws(p_matrix[t], (samples, n), mode, rng) & (cols >= cur[:, None])
            first = np.argmax(z, axis=1)
            nxt = np.where(z.any(axis=1), first, PAST_END)
        elif family == "sma":
            safe = np.where(alive, cur, 0)
            stay = _draws(p_matrix[t][safe], (samples,), mode, rng)
            nxt = np.where(stay, safe, safe + 1)
            at_end = nxt >= n
            nxt = np.where(at_end, n - 1 if edge_policy == "clamp" else PAST_END, nxt)
        else:
            raise RejectedInput(f"unknown family {family!r}")
        cur = np.where(alive, nxt, PAST_END)
        out[:, t] = cur
    return out


def empirical_marginals(paths: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-step attended-index frequencies ``(T, n)`` and past-end frequency ``(T,)``."""
    samples, T = paths.shape
    counts = np.zeros((T, n + 1))
    for t in range(T):
        counts[t] = np.bincount(np.where(paths[:, t] == PAST_END, n, paths[:, t]), minlength=n + 1)
    freq = counts / samples
    return freq[:, :n], freq[:, n]
