"""Synthetic duration task standing in for phoneme-to-spectrogram alignment.

Each regular token is "spoken" for a fixed number of frames (1-3); pause
tokens emit one silent frame and boundary tokens emit none.  A frame is the
one-hot symbol of the token being spoken plus its progress k/d through the
token, so the decoder always knows when a token is finished.  A zero frame
with the stop flag set closes every target.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .config import ToyTaskSpec

SPLITS = ("train", "heldout", "stress")


@dataclass
class ToyPair:
    tokens: np.ndarray  # (n,)
    durations: np.ndarray  # (n,) realised frames per token
    frames: np.ndarray  # (T + 1, F), last row is the stop frame
    stop: np.ndarray  # (T + 1,)

    @property
    def n_frames(self) -> int:
        return len(self.stop)

    def to_json(self) -> str:
        return json.dumps({
            "tokens": self.tokens.tolist(),
            "durations": self.durations.tolist(),
            "frames": self.frames.tolist(),
            "stop": self.stop.tolist(),
        })

    @classmethod
    def from_json(cls, line: str) -> "ToyPair":
        d = json.loads(line)
        return cls(np.array(d["tokens"], dtype=int), np.array(d["durations"], dtype=int),
                   np.array(d["frames"], dtype=float), np.array(d["stop"], dtype=float))


def render_frames(spec: ToyTaskSpec, tokens: Iterable[int], durations: Iterable[int]):
    rows = []
    for tok, dur in zip(tokens, durations):
        symbol = min(tok, spec.pause_token)
        for k in range(dur):
            f = np.zeros(spec.frame_dim)
            f[symbol] = 1.0
            f[-1] = (k + 1) / dur
            rows.append(f)
    rows.append(np.zeros(spec.frame_dim))
    frames = np.array(rows)
    stop = np.zeros(len(rows))
    stop[-1] = 1.0
    return frames, stop


def make_pair(spec: ToyTaskSpec, tokens, rng: np.random.Generator | None = None) -> ToyPair:
    tokens = np.asarray(tokens, dtype=int)
    durations = np.array([spec.token_duration(t) for t in tokens], dtype=int)
    if spec.noise > 0 and rng is not None:
        regular = tokens < spec.vocab_size
        jitter = rng.random(len(tokens)) < spec.noise
        delta = rng.choice((-1, 1), len(tokens))
        durations = np.where(regular & jitter, np.maximum(durations + delta, 1), durations)
    frames, stop = render_frames(spec, tokens, durations)
    return ToyPair(tokens, durations, frames, stop)


def _sample_tokens(spec: ToyTaskSpec, length: int, rng: np.random.Generator) -> np.ndarray:
    toks = rng.integers(0, spec.vocab_size, length)
    kind = rng.random(length)
    for i in range(length):
        if kind[i] < spec.pause_prob:
            toks[i] = spec.pause_token
        elif kind[i] < spec.pause_prob + spec.boundary_prob:
            # boundaries never open or close an utterance, nor follow each other
            if 0 < i < length - 1 and toks[i - 1] != spec.boundary_token:
                toks[i] = spec.boundary_token
    return toks


def generate_dataset(spec: ToyTaskSpec, split: str) -> list[ToyPair]:
    """Deterministic pairs for ``split`` in {train, heldout, stress}."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    rng = np.random.default_rng([spec.seed, SPLITS.index(split)])
    lo, hi = spec.stress_len_range if split == "stress" else spec.train_len_range
    count = {"train": spec.n_train, "heldout": spec.n_heldout, "stress": spec.n_stress}[split]
    pairs = []
    for _ in range(count):
        length = int(rng.integers(lo, hi + 1))
        pairs.append(make_pair(spec, _sample_tokens(spec, length, rng), rng))
    return pairs


def write_jsonl(pairs: list[ToyPair], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(p.to_json() + "\n" for p in pairs))


def read_jsonl(path: Path) -> list[ToyPair]:
    return [ToyPair.from_json(line) for line in Path(path).read_text().splitlines() if line]
