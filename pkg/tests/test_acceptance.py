"""Acceptance suite: one test per primary criterion, each reporting a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v`` (or execute this file directly).
The summary lines are printed at the end of the session.  Criteria 7 and 8 use
the five-seed trained suite from ``conftest.py``, which takes about an hour on
one CPU.
"""

import hashlib
import json
import sys
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, SUITE_SEEDS, SUITE_STEPS
from stepmono import diagnostics as D
from stepmono import kernels as K
from stepmono import oracle as O
from stepmono.cli import EXIT_ACCEPTANCE, EXIT_OK, main
from stepmono.experiment import summarize
from stepmono.gradcheck import numerical_gradient, relative_error
from stepmono.hard_decoder import PAST_END, HardAlignmentPath, sample_paths
from stepmono.toy.config import MECHANISMS, ModelConfig, ToyTaskSpec
from stepmono.toy.data import make_pair
from stepmono.toy.model import Batch, ToyModel

P_EPS = 1e-7


def record(number, name, ok, detail):
    ACCEPTANCE_LINES[number] = f"[{'PASS' if ok else 'FAIL'}] {number}. {name}: {detail}"
    assert ok, ACCEPTANCE_LINES[number]


# -- 1, 2: exact oracle ------------------------------------------------------------

def test_criterion_1_stepwise_oracle():
    start = time.perf_counter()
    worst = 0.0
    for policy in K.EDGE_POLICIES:
        for seed in range(100):
            rng = np.random.default_rng(seed)
            T, n = rng.integers(1, 11, 2)
            p = rng.uniform(P_EPS, 1 - P_EPS, (T, n))
            exact = O.enumerate_stepwise(p, policy)
            worst = max(worst, float(np.max(np.abs(exact.alignment - K.iterate(K.sma_alignment, p,
                                                                                   edge_policy=policy)))))
    elapsed = time.perf_counter() - start
    record(1, "stepwise oracle equivalence", worst <= 1e-12 and elapsed < 10,
           f"max err {worst:.2e} (<= 1e-12), {elapsed:.2f}s (< 10s)")


def test_criterion_2_monotonic_oracle():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        T, n = rng.integers(1, 9, 2)
        p = rng.uniform(P_EPS, 1 - P_EPS, (T, n))
        exact = O.enumerate_monotonic(p)
        worst = max(worst, float(np.max(np.abs(exact.alignment - K.iterate(K.ma_alignment_recursive, p)))))
    worst_par = 0.0
    for seed in range(200):
        rng = np.random.default_rng(1000 + seed)
        n = int(rng.integers(1, 65))
        prev = rng.dirichlet(np.ones(n))
        p = rng.uniform(0.01, 0.99, n)
        par = K.ma_alignment_parallel(prev, p)[0]
        worst_par = max(worst_par, float(np.max(np.abs(par - K.ma_alignment_recursive(prev, p)))))
    record(2, "monotonic oracle equivalence", worst <= 1e-12 and worst_par <= 1e-10,
           f"oracle err {worst:.2e} (<= 1e-12), parallel vs recursive {worst_par:.2e} (<= 1e-10)")


# -- 3: hard/soft consistency -------------------------------------------------------

def test_criterion_3_hard_soft_consistency():
    start = time.perf_counter()
    worst = {}
    cases = [("ma", "leak"), ("sma", "leak"), ("sma", "clamp")]
    for seed in range(5):
        rng = np.random.default_rng(seed)
        p = rng.uniform(0.05, 0.95, (int(rng.integers(3, 7)), 4))
        for family, policy in cases:
            exact = (O.enumerate_monotonic(p) if family == "ma" else O.enumerate_stepwise(p, policy))
            mc = O.monte_carlo(p, family, 100_000, seed, edge_policy=policy)
            tv = float(np.max(O.total_variation(exact, mc)))
            key = f"{family}/{policy}"
            worst[key] = max(worst.get(key, 0.0), tv)
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 0.02 and elapsed < 60
    detail = ", ".join(f"{k} TV {v:.4f}" for k, v in worst.items())
    record(3, "hard/soft consistency", ok, f"{detail} (<= 0.02), {elapsed:.1f}s (< 60s)")


# -- 4: gradients -----------------------------------------------------------------

def _kernel_adjoint_errors(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    prev, p, up = rng.uniform(-1, 1, n), rng.uniform(0.05, 0.95, n), rng.uniform(-1, 1, n)
    errs = []

    def check(fn, adjoint, **kw):
        g_prev, g_p = adjoint(prev, p, up, **kw)
        for g, x in ((g_prev, prev), (g_p, p)):
            errs.append(relative_error(g, numerical_gradient(lambda: float(up @ np.ravel(fn(prev, p, **kw))[:n]), x)))

    check(K.ma_alignment_recursive, K.adjoint_ma_alignment_recursive)
    check(lambda a, b: K.ma_alignment_parallel(a, b)[0], K.adjoint_ma_alignment_parallel)
    for policy in K.EDGE_POLICIES:
        check(K.sma_alignment, K.adjoint_sma_alignment, edge_policy=policy)
    energies = rng.uniform(-3, 3, n)
    errs.append(relative_error(K.adjoint_selection_probabilities(energies, up),
                               numerical_gradient(lambda: float(up @ K.selection_probabilities(energies)), energies)))
    errs.append(relative_error(K.adjoint_softmax_alignment(energies, up),
                               numerical_gradient(lambda: float(up @ K.softmax_alignment(energies)), energies)))
    return max(errs)


GRAD_TASK = ToyTaskSpec(vocab_size=3, n_train=10, n_heldout=2, n_stress=2,
                        train_len_range=(2, 4), stress_len_range=(5, 6))


def _model_error(mech, seed):
    cfg = ModelConfig(mechanism=mech, embed_dim=3, encoder_width=3, decoder_width=4, attention_dim=3,
                      location_filters=2, location_width=3, gmm_components=2, seed=seed)
    model = ToyModel(cfg, GRAD_TASK)
    rng = np.random.default_rng(seed)
    batch = Batch.from_pairs([make_pair(GRAD_TASK, rng.integers(0, 3, 3)) for _ in range(2)])
    _, grads, _ = model.loss_and_grads(batch, rng=np.random.default_rng(seed))

    def f():
        return model.forward_teacher_forced(batch, rng=np.random.default_rng(seed)).loss

    return max(relative_error(grads[k], numerical_gradient(f, model.params[k])) for k in model.used_params())


def test_criterion_4_gradients():
    kernel = max(_kernel_adjoint_errors(seed) for seed in range(20))
    model_cases = [(mech, seed) for seed in range(4) for mech in MECHANISMS]
    full = max(_model_error(mech, seed) for mech, seed in model_cases)
    record(4, "gradient correctness", kernel <= 1e-4 and full <= 1e-4,
           f"kernel adjoints max rel err {kernel:.1e} over 20 instances, "
           f"full model {full:.1e} over {len(model_cases)} instances (<= 1e-4)")


# -- 5: mass laws -----------------------------------------------------------------

def test_criterion_5_mass_laws():
    rng = np.random.default_rng(5)
    clamp_err = leak_err = 0.0
    ma_ok = True
    steps = 10_000
    clamp = leak = ma = None
    for step in range(steps):
        if step % 50 == 0:
            n = int(rng.integers(1, 13))
            clamp, leak, ma = K.one_hot(n), K.one_hot(n), K.one_hot(n)
        p = rng.uniform(P_EPS, 1 - P_EPS, n)
        new_clamp = K.sma_alignment(clamp, p, "clamp")
        clamp_err = max(clamp_err, abs(new_clamp.sum() - clamp.sum()))
        new_leak = K.sma_alignment(leak, p, "leak")
        deficit = leak.sum() - new_leak.sum()
        leak_err = max(leak_err, abs(deficit - float(K.sma_leak(leak, p, "leak"))))
        new_ma = K.ma_alignment_recursive(ma, p)
        ma_ok &= bool(new_ma.sum() <= ma.sum()) and bool(np.all(new_ma >= 0))
        clamp, leak, ma = new_clamp, new_leak, new_ma
    ok = clamp_err <= 1e-12 and leak_err <= 1e-12 and ma_ok
    record(5, "mass laws", ok, f"clamp drift {clamp_err:.1e}, leak mismatch {leak_err:.1e} (<= 1e-12), "
           f"MA non-increasing {'always' if ma_ok else 'VIOLATED'} over {steps} steps")


# -- 6: path invariants -----------------------------------------------------------

def test_criterion_6_path_invariants():
    sma_bad = ma_bad = classified_bad = 0
    total = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        T, n = int(rng.integers(1, 16)), int(rng.integers(1, 10))
        p = rng.uniform(0.05, 0.95, (T, n))
        policy = K.EDGE_POLICIES[seed % 2]
        for row in sample_paths(p, 100, "sma", rng=rng, edge_policy=policy):
            # rows follow the initial focus frame, which attends entry 0
            path = HardAlignmentPath(np.concatenate([[0], row[row != PAST_END]]))
            sma_bad += not (path.is_stepwise() and path.has_prefix_coverage())
            c = D.classify_errors(D.compute_metrics(path, n))
            classified_bad += c.skip_events != 0 or c.repeat_events != 0
        for row in sample_paths(p, 100, "ma", rng=rng):
            live = row[row != PAST_END]
            ma_bad += not (HardAlignmentPath(live).is_monotone() and np.all(row[len(live):] == PAST_END))
        total += 100
    ok = sma_bad == ma_bad == classified_bad == 0
    record(6, "path invariants", ok, f"{total} SMA paths: {sma_bad} invariant failures, "
           f"{classified_bad} with skip/repeat; {total} MA paths: {ma_bad} non-monotone")


# -- 7, 8: trained suite ----------------------------------------------------------

def _runs(trained_suite, mech):
    return [trained_suite[(mech, s)] for s in SUITE_SEEDS]


@pytest.mark.slow
def test_criterion_7_trend(trained_suite, suite_task):
    runs = [r for m in ("lsa", "ma", "sma") for r in _runs(trained_suite, m)]
    summary = summarize(runs)
    rates = {k: summary[k]["stress_failure_rate"] for k in ("lsa", "ma_greedy", "sma")}
    ma_totals = {c: summary["ma_greedy"][f"stress_{c}"] for c in D.ERROR_CLASSES}
    dominant = max(ma_totals, key=ma_totals.get)
    params = max(ToyModel(ModelConfig(mechanism=m), suite_task).param_count() for m in ("lsa", "ma", "sma"))
    slowest = max(r.train_seconds for r in runs)
    budget_ok = params <= 100_000 and SUITE_STEPS <= 10_000 and slowest < 900
    lowest = all(rates["sma"] < rates[k] for k in ("lsa", "ma_greedy"))
    ok = lowest and dominant == "skip" and budget_ok
    rate_text = ", ".join(f"{k} {v:.3f}" for k, v in rates.items())
    record(7, "trend reproduction", ok,
           f"failure rates over {len(SUITE_SEEDS)} seeds: {rate_text}; ma_greedy dominant error {dominant}; "
           f"{params} params, {SUITE_STEPS} steps, slowest training {slowest:.0f}s")


@pytest.mark.slow
def test_criterion_8_heldout_parity(trained_suite):
    runs = [r for m in MECHANISMS for r in _runs(trained_suite, m)]
    acc = {k: v["heldout_accuracy"] for k, v in summarize(runs).items()}
    best = max(acc, key=acc.get)
    gap = acc[best] - acc["sma"]
    record(8, "in-domain parity", gap <= 0.01,
           f"sma {acc['sma']:.4f} vs best {best} {acc[best]:.4f}, gap {100 * gap:.2f} points (<= 1)")


# -- 9: determinism ---------------------------------------------------------------

DET_CONFIG = {
    "task": {"vocab_size": 3, "n_train": 20, "n_heldout": 4, "n_stress": 3,
             "train_len_range": [2, 4], "stress_len_range": [5, 7]},
    "model": {"embed_dim": 3, "encoder_width": 3, "decoder_width": 4, "attention_dim": 3,
              "location_filters": 2, "location_width": 3, "gmm_components": 2},
    "train": {"steps": 6, "batch_size": 4, "checkpoint_every": 3},
    "stress": {"variants": [["lsa", "soft"], ["ma", "hard_greedy"], ["sma", "soft"]], "seeds": [0, 1]},
}

COMMANDS = [
    ["gen", "--config", "c.json", "--out", "data"],
    ["train", "--config", "c.json", "--data", "data/train.jsonl", "--out", "train"],
    ["infer", "--config", "c.json", "--checkpoint", "train/checkpoint.json",
     "--data", "data/stress.jsonl", "--out", "infer"],
    ["diagnose", "--config", "c.json", "--input", "infer", "--out", "diag"],
    ["stress", "--config", "c.json", "--out", "stress"],
    ["oracle", "--random", "20", "--seed", "3", "--out", "oracle"],
]


def _digest(root):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_9_determinism(tmp_path, monkeypatch):
    digests = []
    for run in ("first", "second"):
        root = tmp_path / run
        root.mkdir()
        (root / "c.json").write_text(json.dumps(DET_CONFIG))
        monkeypatch.chdir(root)
        for cmd in COMMANDS:
            assert main(cmd) in (EXIT_OK, EXIT_ACCEPTANCE), cmd
        digests.append(_digest(root))
    differing = sorted(k for k in digests[0] if digests[0][k] != digests[1].get(k))
    same_files = set(digests[0]) == set(digests[1])
    ok = same_files and not differing
    record(9, "determinism", ok, f"{len(COMMANDS)} commands, {len(digests[0])} files, "
           f"{len(differing)} differ" + (f": {differing[:3]}" if differing else ""))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
