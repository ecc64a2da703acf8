"""Validated configuration records for the toy task, model, training and inference.

All records reject unknown keys so a typo in a run config fails loudly.
"""

from __future__ import annotations

import math
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

MECHANISMS = ("lsa", "gmm", "ma", "fa", "fa_ta", "sma")
Mechanism = Literal["lsa", "gmm", "ma", "fa", "fa_ta", "sma"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ToyTaskSpec(_Strict):
    vocab_size: int = Field(10, ge=2)
    # per regular token, repeat count in {1, 2, 3}; default cycles 1, 2, 3, 1, ...
    durations: tuple[int, ...] | None = None
    pause_prob: float = Field(0.1, ge=0, le=1)
    boundary_prob: float = Field(0.05, ge=0, le=1)
    train_len_range: tuple[int, int] = (4, 12)
    stress_len_range: tuple[int, int] = (24, 48)
    n_train: int = Field(1000, ge=1)
    n_heldout: int = Field(100, ge=1)
    n_stress: int = Field(40, ge=1)
    noise: float = Field(0.0, ge=0, le=1)
    seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        lo, hi = self.train_len_range
        slo, shi = self.stress_len_range
        if not 1 <= lo <= hi or not slo <= shi:
            raise ValueError("length ranges must be ordered and positive")
        if slo <= hi:
            raise ValueError("stress lengths must strictly exceed training lengths")
        if self.durations is not None:
            if len(self.durations) != self.vocab_size:
                raise ValueError("durations needs one entry per regular token")
            if any(d not in (1, 2, 3) for d in self.durations):
                raise ValueError("durations must be in {1, 2, 3}")
        if self.pause_prob + self.boundary_prob >= 1:
            raise ValueError("pause_prob + boundary_prob must be < 1")
        return self

    def duration_map(self) -> tuple[int, ...]:
        if self.durations is not None:
            return self.durations
        return tuple(1 + k % 3 for k in range(self.vocab_size))

    # token ids: 0..V-1 regular, V pause (one silent frame), V+1 boundary (no frames)
    @property
    def pause_token(self) -> int:
        return self.vocab_size

    @property
    def boundary_token(self) -> int:
        return self.vocab_size + 1

    @property
    def n_tokens(self) -> int:
        return self.vocab_size + 2

    @property
    def n_symbols(self) -> int:
        return self.vocab_size + 1

    @property
    def frame_dim(self) -> int:
        return self.n_symbols + 1

    def token_duration(self, token: int) -> int:
        if token == self.pause_token:
            return 1
        if token == self.boundary_token:
            return 0
        return self.duration_map()[token]


class ModelConfig(_Strict):
    mechanism: Mechanism = "sma"
    embed_dim: int = Field(16, ge=1)
    encoder_width: int = Field(32, ge=1)  # per direction
    decoder_width: int = Field(64, ge=1)
    attention_dim: int = Field(32, ge=1)
    location_filters: int = Field(8, ge=1)
    location_width: int = Field(7, ge=1)
    gmm_components: int = Field(20, ge=1)
    score_bias: float = 3.5
    noise_scale: float = Field(2.0, ge=0)
    edge_policy: Literal["clamp", "leak"] = "clamp"
    seed: int = 0

    @model_validator(mode="after")
    def _odd_filter(self):
        if self.location_width % 2 == 0:
            raise ValueError("location_width must be odd")
        return self


class TrainConfig(_Strict):
    optimizer: Literal["adam"] = "adam"
    learning_rate: float = Field(1e-2, gt=0)
    # cosine decay from learning_rate down to learning_rate * final_lr_ratio
    final_lr_ratio: float = Field(0.05, gt=0, le=1)
    beta1: float = Field(0.9, gt=0, lt=1)
    beta2: float = Field(0.999, gt=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    # None picks 1.0 for forward attention and 5.0 otherwise
    clip_norm: float | None = Field(None, gt=0)
    steps: int = Field(4000, ge=1)
    batch_size: int = Field(16, ge=1)
    checkpoint_every: int = Field(0, ge=0)
    log_every: int = Field(50, ge=1)
    seed: int = 0

    def lr_at(self, step: int) -> float:
        """Learning rate for 1-based ``step``."""
        frac = (step - 1) / max(self.steps - 1, 1)
        scale = self.final_lr_ratio + (1 - self.final_lr_ratio) * 0.5 * (1 + math.cos(math.pi * frac))
        return self.learning_rate * scale

    def clip_for(self, mechanism: str) -> float:
        if self.clip_norm is not None:
            return self.clip_norm
        return 1.0 if mechanism in ("fa", "fa_ta") else 5.0


class InferenceConfig(_Strict):
    mode: Literal["soft", "hard_sampled", "hard_greedy"] = "soft"
    max_frames: int | None = Field(None, ge=1)  # None: 4 frames per input token + 10
    stop_threshold: float = Field(0.5, gt=0, lt=1)
    seed: int = 0

    def frame_budget(self, n_tokens: int) -> int:
        return self.max_frames if self.max_frames is not None else 4 * n_tokens + 10
