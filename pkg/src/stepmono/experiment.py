"""Train-and-evaluate runs comparing mechanisms on the toy task.

A *variant* is a mechanism plus an inference mode, e.g. ``("ma", "hard_greedy")``.
Held-out evaluation reports frame accuracy; stress evaluation turns every
inferred alignment into an error classification and a corpus report.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics as D
from .toy.config import InferenceConfig, ModelConfig, ToyTaskSpec, TrainConfig
from .toy.data import ToyPair, generate_dataset
from .toy.infer import InferenceResult, frame_accuracy, infer, infer_batch, positional_accuracy
from .toy.model import ToyModel
from .toy.train import TrainResult, bucket_by_length, train

log = logging.getLogger(__name__)

Variant = tuple[str, str]

DEFAULT_VARIANTS: tuple[Variant, ...] = (
    ("lsa", "soft"), ("gmm", "soft"), ("fa", "soft"), ("fa_ta", "soft"),
    ("ma", "soft"), ("ma", "hard_greedy"), ("sma", "soft"), ("sma", "hard_greedy"),
)
STRESS_VARIANTS: tuple[Variant, ...] = (("lsa", "soft"), ("ma", "hard_greedy"), ("sma", "soft"))


def variant_label(v: Variant) -> str:
    return v[0] if v[1] == "soft" else f"{v[0]}_{v[1].removeprefix('hard_')}"


def run_inference(model: ToyModel, pairs: list[ToyPair], config: InferenceConfig) -> list[InferenceResult]:
    """Inference over ``pairs`` in input order; soft runs are batched by input length."""
    out: list[InferenceResult | None] = [None] * len(pairs)
    for _, idx in bucket_by_length(pairs).items():
        if config.mode == "soft":
            res = infer_batch(model, np.stack([pairs[i].tokens for i in idx]), config)
        else:
            res = [infer(model, pairs[i].tokens, config) for i in idx]
        for i, r in zip(idx, res):
            out[i] = r
    return out  # type: ignore[return-value]


def exempt_mask(task: ToyTaskSpec, tokens: np.ndarray) -> np.ndarray:
    return np.array([task.token_duration(int(t)) == 0 for t in tokens])


def classify_result(task: ToyTaskSpec, pair: ToyPair, result: InferenceResult,
                    thresholds: D.Thresholds) -> D.ErrorClassification:
    n = len(pair.tokens)
    source = result.path if result.path is not None else result.alignment
    metrics = D.compute_metrics(source, n, thresholds.c_min)
    return D.classify_errors(metrics, thresholds, exempt_mask(task, pair.tokens))


@dataclass
class Evaluation:
    label: str
    accuracy: float
    positional_accuracy: float
    report: D.CorpusReport
    truncated: int


def evaluate(model: ToyModel, pairs: list[ToyPair], mode: str,
             thresholds: D.Thresholds | None = None, seed: int = 0) -> Evaluation:
    th = thresholds or D.Thresholds()
    task = model.task
    results = run_inference(model, pairs, InferenceConfig(mode=mode, seed=seed))
    acc = [frame_accuracy(r, p, task.n_symbols) for r, p in zip(results, pairs)]
    pos = [positional_accuracy(r, p, task.n_symbols) for r, p in zip(results, pairs)]
    cases = [classify_result(task, p, r, th) for p, r in zip(pairs, results)]
    label = variant_label((model.mechanism, mode))
    report = D.corpus_report(cases, label, [str(i) for i in range(len(pairs))])
    return Evaluation(label, float(np.mean(acc)), float(np.mean(pos)), report,
                      sum(r.truncated for r in results))


@dataclass
class SeedRun:
    seed: int
    mechanism: str
    train: TrainResult
    heldout: dict[str, Evaluation] = field(default_factory=dict)
    stress: dict[str, Evaluation] = field(default_factory=dict)
    train_seconds: float = 0.0


def train_and_evaluate(task: ToyTaskSpec, mechanism: str, modes: list[str], seed: int,
                       train_config: TrainConfig, model_overrides: dict | None = None,
                       thresholds: D.Thresholds | None = None,
                       splits: dict[str, list[ToyPair]] | None = None,
                       stress_modes: list[str] | None = None) -> SeedRun:
    splits = splits or {s: generate_dataset(task, s) for s in ("train", "heldout", "stress")}
    model = ToyModel(ModelConfig(mechanism=mechanism, seed=seed, **(model_overrides or {})), task)
    start = time.perf_counter()
    tr = train(model, splits["train"], train_config.model_copy(update={"seed": seed}))
    run = SeedRun(seed, mechanism, tr, train_seconds=time.perf_counter() - start)
    for mode in modes:
        ev = evaluate(model, splits["heldout"], mode, thresholds, seed)
        run.heldout[ev.label] = ev
    for mode in (stress_modes if stress_modes is not None else modes):
        ev = evaluate(model, splits["stress"], mode, thresholds, seed)
        run.stress[ev.label] = ev
    log.info("%s seed %d: %s", mechanism, seed,
             {k: round(v.accuracy, 4) for k, v in run.heldout.items()})
    return run


def summarize(runs: list[SeedRun]) -> dict[str, dict[str, float]]:
    """Seed-averaged held-out accuracy, stress failure rate and stress error totals per variant."""
    acc: dict[str, list[float]] = {}
    fail: dict[str, list[float]] = {}
    totals: dict[str, dict[str, list[int]]] = {}
    for run in runs:
        for label, ev in run.heldout.items():
            acc.setdefault(label, []).append(ev.accuracy)
        for label, ev in run.stress.items():
            fail.setdefault(label, []).append(ev.report.failure_rate)
            for k, v in ev.report.totals().items():
                totals.setdefault(label, {}).setdefault(k, []).append(v)
    out: dict[str, dict[str, float]] = {}
    for label in sorted(set(acc) | set(fail)):
        row: dict[str, float] = {}
        if label in acc:
            row["heldout_accuracy"] = float(np.mean(acc[label]))
        if label in fail:
            row["stress_failure_rate"] = float(np.mean(fail[label]))
            for k, v in totals[label].items():
                row[f"stress_{k}"] = float(np.mean(v))
        out[label] = row
    return out
