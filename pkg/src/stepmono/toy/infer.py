"""Free-running inference: soft (expected context) or hard (one attended entry per frame).

The decoder is fed its own previous prediction.  A frame whose stop
probability exceeds the threshold ends the utterance and is not part of the
output; hitting the frame budget sets ``truncated``.  Hard modes route the
stay/stop decisions through :func:`stepmono.hard_decoder.decode_hard` with
noise-free energies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..hard_decoder import HardAlignmentPath, SamplerConfig, decode_hard
from . import autograd as ag
from .config import InferenceConfig
from .data import ToyPair
from .model import MONOTONIC, DecoderState, ToyModel


@dataclass
class InferenceResult:
    frames: np.ndarray  # (T, F) emitted frames, stop frame excluded
    alignment: np.ndarray  # (T, n); one-hot rows in hard modes
    path: HardAlignmentPath | None
    truncated: bool
    fallbacks: int = 0

    @property
    def n_frames(self) -> int:
        return len(self.frames)


def _split(model: ToyModel, out: np.ndarray):
    F = model.task.frame_dim
    return out[..., :F], expit(out[..., F])


def infer_batch(model: ToyModel, tokens: np.ndarray, config: InferenceConfig) -> list[InferenceResult]:
    """Soft inference for a (B, n) batch of equal-length inputs."""
    if config.mode != "soft":
        raise ValueError("infer_batch runs soft inference only; use infer for hard modes")
    tokens = np.atleast_2d(np.asarray(tokens, dtype=int))
    B, n = tokens.shape
    tape = ag.Tape()
    P = model.params
    memory = model.encode(tape, P, tokens)
    state = model.initial_state(B, n)
    F = model.task.frame_dim
    prev_frame = np.zeros((B, F))
    budget = config.frame_budget(n)
    frames, rows = [], []
    done_at = np.full(B, -1)
    fallbacks = np.zeros(B, dtype=int)
    for i in range(budget):
        h = model.advance(tape, P, state, prev_frame)
        alignment, centers, fb = model.attend(tape, P, state, h, memory, training=False)
        ctx = ag.context(tape, alignment, memory)
        frame, stop = _split(model, ag.value(model.emit(tape, P, h, ctx)))
        if fb is not None:
            fallbacks += np.asarray(fb, dtype=int) * (done_at < 0)
        frames.append(frame)
        rows.append(ag.value(alignment))
        done_at = np.where((done_at < 0) & (stop > config.stop_threshold), i, done_at)
        if np.all(done_at >= 0):
            break
        state = DecoderState(ag.value(h), ag.value(ctx), ag.value(alignment),
                             ag.value(centers) if centers is not None else None, i + 1)
        prev_frame = frame
        tape = _trim(tape)
    frames = np.stack(frames, axis=1)
    rows = np.stack(rows, axis=1)
    results = []
    for b in range(B):
        end = done_at[b] if done_at[b] >= 0 else budget
        results.append(InferenceResult(frames[b, :end], rows[b, :end], None,
                                       truncated=bool(done_at[b] < 0), fallbacks=int(fallbacks[b])))
    return results


def _trim(tape: ag.Tape) -> ag.Tape:
    # inference never calls backward, so recorded nodes can be dropped
    tape.nodes.clear()
    return tape


def infer(model: ToyModel, tokens, config: InferenceConfig) -> InferenceResult:
    tokens = np.asarray(tokens, dtype=int)
    if config.mode == "soft":
        return infer_batch(model, tokens[None], config)[0]
    if model.mechanism not in MONOTONIC:
        raise ValueError(f"hard inference needs a monotonic mechanism, got {model.mechanism!r}")
    return _infer_hard(model, tokens, config)


def _infer_hard(model: ToyModel, tokens: np.ndarray, config: InferenceConfig) -> InferenceResult:
    tape = ag.Tape()
    P = model.params
    n = len(tokens)
    memory = ag.value(model.encode(tape, P, tokens[None]))  # (1, n, D)
    state = model.initial_state(1, n)
    F = model.task.frame_dim
    cur = {"h": None, "prev_frame": np.zeros((1, F)), "context": state.context}
    frames: list[np.ndarray] = []

    def step_fn(step, prev_index):
        dec = DecoderState(state.h, cur["context"], None)
        h = ag.value(model.advance(tape, P, dec, cur["prev_frame"]))
        state.h = h
        p = ag.value(model.probabilities(tape, P, h, memory, training=False))
        _trim(tape)
        return p[0]

    def on_attend(step, index, ctx):
        context = ctx[None]
        frame, stop = _split(model, ag.value(model.emit(tape, P, state.h, context)))
        _trim(tape)
        cur["context"] = context
        cur["prev_frame"] = frame
        if stop[0] > config.stop_threshold:
            return True
        frames.append(frame[0])
        return False

    sampler = SamplerConfig(mode="greedy" if config.mode == "hard_greedy" else "sampled",
                            seed=config.seed, max_steps=config.frame_budget(n))
    res = decode_hard(memory[0], step_fn, sampler, family=model.mechanism,
                      edge_policy=model.config.edge_policy, on_attend=on_attend)
    positions = res.path.positions[:len(frames)]
    path = HardAlignmentPath(positions, res.path.terminated_past_end, res.path.truncated)
    alignment = np.zeros((len(frames), n))
    alignment[np.arange(len(frames)), positions] = 1.0
    out = np.array(frames).reshape(-1, F)
    return InferenceResult(out, alignment, path, truncated=res.path.truncated)


def _symbols(frames: np.ndarray, n_symbols: int) -> np.ndarray:
    return np.argmax(frames[:, :n_symbols], axis=1) if len(frames) else np.zeros(0, dtype=int)


def edit_distance(a, b) -> int:
    """Levenshtein distance between two integer sequences."""
    a, b = list(a), list(b)
    row = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        prev, row[0] = row[0], i
        for j, y in enumerate(b, 1):
            prev, row[j] = row[j], min(row[j] + 1, row[j - 1] + 1, prev + (x != y))
    return row[-1]


def frame_accuracy(result: InferenceResult | np.ndarray, target: ToyPair, n_symbols: int) -> float:
    """1 - (frame-symbol edit distance) / max(target length, predicted length).

    One inserted or dropped frame costs one frame rather than shifting every
    later frame out of register.
    """
    pred = result.frames if isinstance(result, InferenceResult) else np.asarray(result)
    ref = target.frames[:-1]
    denom = max(len(ref), len(pred))
    if denom == 0:
        return 1.0
    return 1.0 - edit_distance(_symbols(pred, n_symbols), _symbols(ref, n_symbols)) / denom


def positional_accuracy(result: InferenceResult | np.ndarray, target: ToyPair, n_symbols: int) -> float:
    """Share of frame positions whose symbol matches, over max(target, predicted) length."""
    pred = result.frames if isinstance(result, InferenceResult) else np.asarray(result)
    ref = target.frames[:-1]
    denom = max(len(ref), len(pred))
    if denom == 0:
        return 1.0
    m = min(len(ref), len(pred))
    return float(np.sum(_symbols(pred[:m], n_symbols) == _symbols(ref[:m], n_symbols))) / denom
