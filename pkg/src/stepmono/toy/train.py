"""Adam training loop with gradient-norm clipping and JSON checkpoints."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ModelConfig, ToyTaskSpec, TrainConfig
from .data import ToyPair
from .model import Batch, ToyModel

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class TrainResult:
    model: ToyModel
    losses: list[float]
    grad_norms: list[float]
    fallbacks: int = 0
    aborted: bool = False
    abort_reason: str | None = None
    checkpoints: list[str] = field(default_factory=list)

    def manifest(self, train_config: TrainConfig) -> dict:
        return {
            "model": self.model.config.model_dump(mode="json"),
            "task": self.model.task.model_dump(mode="json"),
            "train": train_config.model_dump(mode="json"),
            "param_count": self.model.param_count(),
            "losses": self.losses,
            "grad_norms": self.grad_norms,
            "fallbacks": self.fallbacks,
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
            "checkpoints": self.checkpoints,
        }


def save_checkpoint(model: ToyModel, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "version": CHECKPOINT_VERSION,
        "model": model.config.model_dump(mode="json"),
        "task": model.task.model_dump(mode="json"),
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                   for k, v in sorted(model.params.items())},
    }
    path.write_text(json.dumps(doc))


def load_checkpoint(path: Path) -> ToyModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    params = {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in doc["params"].items()}
    return ToyModel(ModelConfig(**doc["model"]), ToyTaskSpec(**doc["task"]), params)


def bucket_by_length(pairs: list[ToyPair]) -> dict[int, list[int]]:
    buckets: dict[int, list[int]] = {}
    for i, p in enumerate(pairs):
        buckets.setdefault(len(p.tokens), []).append(i)
    return dict(sorted(buckets.items()))


class BatchSampler:
    """Draws equal-input-length batches; the bucket is chosen in proportion to its size."""

    def __init__(self, pairs: list[ToyPair], batch_size: int, rng: np.random.Generator):
        self.pairs = pairs
        self.batch_size = batch_size
        self.rng = rng
        self.buckets = list(bucket_by_length(pairs).values())
        sizes = np.array([len(b) for b in self.buckets], float)
        self.weights = sizes / sizes.sum()

    def draw(self) -> Batch:
        bucket = self.buckets[self.rng.choice(len(self.buckets), p=self.weights)]
        k = min(self.batch_size, len(bucket))
        idx = self.rng.choice(bucket, k, replace=False)
        return Batch.from_pairs([self.pairs[i] for i in np.sort(idx)])


class Adam:
    def __init__(self, params: dict[str, np.ndarray], config: TrainConfig):
        self.c = config
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        c = self.c
        self.t += 1
        b1t = 1 - c.beta1 ** self.t
        b2t = 1 - c.beta2 ** self.t
        lr = c.lr_at(self.t)
        for k in sorted(params):
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            params[k] = params[k] - lr * (self.m[k] / b1t) / (np.sqrt(self.v[k] / b2t) + c.adam_eps)


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for _, g in sorted(grads.items()))))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float | None) -> float:
    """Rescale in place so the global norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_norm(grads)
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def train(model: ToyModel, pairs: list[ToyPair], config: TrainConfig,
          out_dir: Path | None = None, clip: bool = True) -> TrainResult:
    """Teacher-forced training.  Deterministic given ``config.seed``.

    A non-finite loss or parameter stops the run; the model keeps the last
    finite parameters and, if ``out_dir`` is set, ``last_good.json`` holds them.
    """
    rng = np.random.default_rng([config.seed, 1])
    noise_rng = np.random.default_rng([config.seed, 2])
    sampler = BatchSampler(pairs, config.batch_size, rng)
    opt = Adam(model.params, config)
    max_norm = config.clip_for(model.mechanism) if clip else None
    result = TrainResult(model, [], [])
    last_good = {k: v.copy() for k, v in model.params.items()}

    for step in range(1, config.steps + 1):
        batch = sampler.draw()
        try:
            loss, grads, fwd = model.loss_and_grads(batch, training=True, rng=noise_rng)
        except FloatingPointError as exc:
            result.aborted, result.abort_reason = True, f"step {step}: {exc}"
            break
        norm = clip_gradients(grads, max_norm)
        if not np.isfinite(norm):
            result.aborted, result.abort_reason = True, f"step {step}: non-finite gradient"
            break
        opt.update(model.params, grads)
        if not all(np.all(np.isfinite(v)) for v in model.params.values()):
            result.aborted, result.abort_reason = True, f"step {step}: non-finite parameters"
            break
        last_good = {k: v.copy() for k, v in model.params.items()}
        result.losses.append(loss)
        result.grad_norms.append(norm)
        result.fallbacks += fwd.fallbacks
        if step % config.log_every == 0:
            log.info("step %d loss %.5f |g| %.3f", step, loss, norm)
        if out_dir is not None and config.checkpoint_every and step % config.checkpoint_every == 0:
            name = f"checkpoint_{step:06d}.json"
            save_checkpoint(model, Path(out_dir) / name)
            result.checkpoints.append(name)

    if result.aborted:
        log.error("training aborted: %s", result.abort_reason)
        model.params = last_good
        if out_dir is not None:
            save_checkpoint(model, Path(out_dir) / "last_good.json")
    return result
