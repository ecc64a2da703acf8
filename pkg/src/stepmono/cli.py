"""Command-line front end: ``stepmono gen|train|infer|diagnose|oracle|stress``.

Every command reads an optional JSON run config (unknown keys rejected),
writes its outputs under ``--out`` and leaves a ``manifest.json`` there.
Exit codes: 0 success, 1 usage or config error, 2 runtime failure,
3 the command ran but its acceptance check failed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__
from . import diagnostics as D
from . import kernels as K
from . import oracle as O
from .hard_decoder import HardAlignmentPath
from .experiment import STRESS_VARIANTS, evaluate, run_inference, variant_label
from .toy.config import InferenceConfig, Mechanism, ModelConfig, ToyTaskSpec, TrainConfig
from .toy.data import SPLITS, generate_dataset, read_jsonl, write_jsonl
from .toy.model import ToyModel
from .toy.train import load_checkpoint, save_checkpoint, train

log = logging.getLogger("stepmono")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_ACCEPTANCE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ThresholdConfig(_Strict):
    w_min: float = Field(0.5, ge=0, le=1)
    collapse_run: int = Field(5, ge=1)
    c_min: float = Field(0.5, ge=0)
    collapse_tol: int = Field(0, ge=0)
    repeat_tol: int = Field(0, ge=0)
    skip_tol: int = Field(0, ge=0)
    unreached_tol: int = Field(0, ge=0)

    def build(self) -> D.Thresholds:
        return D.Thresholds(**self.model_dump())


class StressConfig(_Strict):
    variants: list[tuple[Mechanism, Literal["soft", "hard_sampled", "hard_greedy"]]] = list(STRESS_VARIANTS)
    seeds: list[int] = [0]


class RunConfig(_Strict):
    seed: int = 0
    task: ToyTaskSpec = ToyTaskSpec()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    inference: InferenceConfig = InferenceConfig()
    thresholds: ThresholdConfig = ThresholdConfig()
    stress: StressConfig = StressConfig()

    def seeded(self) -> "RunConfig":
        """Propagate the run seed into model, training and inference."""
        s = self.seed
        return self.model_copy(update={
            "model": self.model.model_copy(update={"seed": s}),
            "train": self.train.model_copy(update={"seed": s}),
            "inference": self.inference.model_copy(update={"seed": s}),
        })


def load_config(path: str | None, seed: int | None) -> RunConfig:
    data = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {p} is not valid JSON: {exc}") from exc
    if seed is not None:
        data["seed"] = seed
    try:
        return RunConfig.model_validate(data).seeded()
    except ValidationError as exc:
        raise UsageError(f"invalid config:\n{exc}") from exc


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(canonical_json(cfg.model_dump(mode="json")).encode()).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1)


def write_manifest(out: Path, command: str, cfg: RunConfig | None, inputs: dict, extra: dict) -> None:
    doc = {
        "command": command,
        "inputs": inputs,
        "config": cfg.model_dump(mode="json") if cfg is not None else None,
        "config_hash": config_hash(cfg) if cfg is not None else None,
        "seed": cfg.seed if cfg is not None else None,
        "versions": {"stepmono": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        **extra,
    }
    (out / "manifest.json").write_text(canonical_json(doc) + "\n")


def _out_dir(args) -> Path:
    if args.out is None:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_file(path: str | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _load_pairs(args, cfg: RunConfig, default_split: str):
    if args.data is not None:
        return read_jsonl(_require_file(args.data, "data")), str(args.data)
    return generate_dataset(cfg.task, default_split), f"generated:{default_split}"


# -- commands -------------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = _out_dir(args)
    counts = {}
    for split in SPLITS:
        pairs = generate_dataset(cfg.task, split)
        write_jsonl(pairs, out / f"{split}.jsonl")
        counts[split] = len(pairs)
    write_manifest(out, "gen", cfg, {}, {"counts": counts})
    print(f"wrote {sum(counts.values())} pairs to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed)
    pairs, source = _load_pairs(args, cfg, "train")
    out = _out_dir(args)
    model = ToyModel(cfg.model, cfg.task)
    result = train(model, pairs, cfg.train, out_dir=out)
    save_checkpoint(model, out / "checkpoint.json")
    write_manifest(out, "train", cfg, {"data": source}, result.manifest(cfg.train))
    if result.aborted:
        print(f"training aborted: {result.abort_reason}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"trained {model.mechanism} for {len(result.losses)} steps, "
          f"final loss {result.losses[-1]:.6f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    cfg = load_config(args.config, args.seed)
    ck = _require_file(args.checkpoint, "checkpoint")
    model = load_checkpoint(ck)
    pairs, source = _load_pairs(args, cfg, "heldout")
    out = _out_dir(args)
    results = run_inference(model, pairs, cfg.inference)
    (out / "alignments").mkdir(exist_ok=True)
    lines = []
    for i, (pair, res) in enumerate(zip(pairs, results)):
        name = f"alignments/case_{i:04d}.csv"
        (out / name).write_text(D.alignment_to_csv(res.alignment) if len(res.alignment) else "")
        case = {"case": i, "tokens": pair.tokens.tolist(), "alignment": name,
                "frames": res.frames.tolist(), "truncated": res.truncated}
        if res.path is not None:
            case["path"] = res.path.positions.tolist()
            case["past_end"] = res.path.terminated_past_end
        lines.append(json.dumps(case, sort_keys=True))
    (out / "cases.jsonl").write_text("".join(line + "\n" for line in lines))
    write_manifest(out, "infer", cfg, {"checkpoint": str(ck), "data": source},
                   {"mechanism": model.mechanism, "mode": cfg.inference.mode, "cases": len(pairs)})
    print(f"inferred {len(pairs)} cases into {out}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = load_config(args.config, args.seed)
    src = Path(args.input) if args.input else None
    if src is None or not (src / "cases.jsonl").is_file():
        raise UsageError(f"--input must be an infer output directory with cases.jsonl: {src}")
    infer_manifest = json.loads((src / "manifest.json").read_text())
    label = variant_label((infer_manifest["mechanism"], infer_manifest["mode"]))
    task = ToyTaskSpec.model_validate(infer_manifest["config"]["task"])
    out = _out_dir(args)
    th = cfg.thresholds.build()
    cases, ids = [], []
    for line in (src / "cases.jsonl").read_text().splitlines():
        case = json.loads(line)
        tokens = np.array(case["tokens"], dtype=int)
        n = len(tokens)
        if "path" in case:
            source = HardAlignmentPath(np.array(case["path"], dtype=int), case["past_end"])
            rows = D.path_to_rows(source, n)
        else:
            text = (src / case["alignment"]).read_text()
            rows = D.alignment_from_csv(text) if text else np.zeros((0, n))
            source = rows
        metrics = D.compute_metrics(source, n, th.c_min)
        cid = f"{case['case']:04d}"
        (out / "metrics").mkdir(exist_ok=True)
        (out / "metrics" / f"case_{cid}.csv").write_text(metrics.to_csv())
        if len(rows):
            D.render_alignment_heatmap(rows, out / "heatmaps" / f"case_{cid}")
        exempt = np.array([task.token_duration(int(t)) == 0 for t in tokens])
        cases.append(D.classify_errors(metrics, th, exempt))
        ids.append(cid)
    report = D.corpus_report(cases, label, ids)
    (out / "classification.csv").write_text(report.cases_csv())
    (out / "report.csv").write_text(D.reports_csv([report]))
    (out / "report.txt").write_text(D.reports_table([report]))
    write_manifest(out, "diagnose", cfg, {"input": str(src)},
                   {"failure_rate": report.failure_rate, "totals": report.totals()})
    print(D.reports_table([report]), end="")
    return EXIT_OK


def oracle_sweep(count: int, seed: int, tol: float = 1e-12) -> tuple[int, list[dict]]:
    """Random instances checked against the exact enumerations; returns (passed, per-instance rows)."""
    rng = np.random.default_rng(seed)
    rows = []
    passed = 0
    for k in range(count):
        T, n = (int(x) for x in rng.integers(1, 11, 2))
        p = rng.uniform(K.EPS_PROB, 1 - K.EPS_PROB, (T, n))
        errs = {}
        for policy in K.EDGE_POLICIES:
            exact = O.enumerate_stepwise(p, policy)
            errs[f"sma_{policy}"] = float(np.max(np.abs(
                exact.alignment - K.iterate(K.sma_alignment, p, edge_policy=policy))))
        Tm, nm = min(T, O.MONOTONIC_LIMIT), min(n, O.MONOTONIC_LIMIT)
        pm = p[:Tm, :nm]
        errs["ma"] = float(np.max(np.abs(O.enumerate_monotonic(pm).alignment
                                         - K.iterate(K.ma_alignment_recursive, pm))))
        ok = max(errs.values()) <= tol
        passed += ok
        rows.append({"instance": k, "T": T, "n": n, "max_error": max(errs.values()), "ok": ok,
                     "errors": errs})
    return passed, rows


def oracle_matrix(p: np.ndarray, family: str, policy: str, tol: float = 1e-12) -> tuple[bool, float]:
    if family == "sma":
        exact = O.enumerate_stepwise(p, policy).alignment
        got = K.iterate(K.sma_alignment, p, edge_policy=policy)
    else:
        exact = O.enumerate_monotonic(p).alignment
        got = K.iterate(K.ma_alignment_recursive, p)
    err = float(np.max(np.abs(exact - got)))
    return err <= tol, err


def cmd_oracle(args) -> int:
    out = Path(args.out) if args.out else None
    if args.p_matrix is not None:
        path = _require_file(args.p_matrix, "p-matrix")
        try:
            p = np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float))
        except ValueError as exc:
            raise UsageError(f"cannot parse p-matrix {path}: {exc}") from exc
        if np.any((p <= 0) | (p >= 1)):
            raise UsageError("p-matrix entries must lie strictly inside (0, 1)")
        ok, err = oracle_matrix(p, args.family, args.edge_policy)
        msg = f"{'1/1' if ok else '0/1'} instances within 1e-12 (max error {err:.3e})"
        extra = {"passed": int(ok), "total": 1, "max_error": err}
        inputs = {"p_matrix": str(path), "family": args.family, "edge_policy": args.edge_policy}
    else:
        count = args.random if args.random is not None else 100
        seed = args.seed if args.seed is not None else 0
        passed, rows = oracle_sweep(count, seed)
        ok = passed == count
        msg = f"{passed}/{count} instances within 1e-12"
        extra = {"passed": passed, "total": count, "instances": rows}
        inputs = {"random": count, "seed": seed}
    print(msg)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, "oracle", None, inputs, extra)
    return EXIT_OK if ok else EXIT_ACCEPTANCE


def _parse_checkpoint_args(items: list[str]) -> dict[str, tuple[Path, str]]:
    """``label=path`` or ``path`` (soft mode) items; label is a variant label."""
    out = {}
    for item in items:
        mode = "soft"
        if "=" in item:
            mode, item = item.split("=", 1)
        if mode not in ("soft", "hard_sampled", "hard_greedy"):
            raise UsageError(f"unknown inference mode {mode!r} in --checkpoint")
        p = _require_file(item, "checkpoint")
        out[f"{p}:{mode}"] = (p, mode)
    return out


def cmd_stress(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = _out_dir(args)
    pairs, source = _load_pairs(args, cfg, "stress")
    th = cfg.thresholds.build()
    evaluations: dict[str, list] = {}
    inputs: dict = {"data": source}
    if args.checkpoint:
        jobs = _parse_checkpoint_args(args.checkpoint)
        inputs["checkpoints"] = sorted(jobs)
        for _, (path, mode) in sorted(jobs.items()):
            model = load_checkpoint(path)
            ev = evaluate(model, pairs, mode, th, cfg.seed)
            evaluations.setdefault(ev.label, []).append(ev)
    else:
        train_pairs = generate_dataset(cfg.task, "train")
        for seed in cfg.stress.seeds:
            for mech, mode in cfg.stress.variants:
                model = ToyModel(cfg.model.model_copy(update={"mechanism": mech, "seed": seed}), cfg.task)
                res = train(model, train_pairs, cfg.train.model_copy(update={"seed": seed}))
                if res.aborted:
                    print(f"{mech} seed {seed} aborted: {res.abort_reason}", file=sys.stderr)
                    return EXIT_RUNTIME
                save_checkpoint(model, out / "checkpoints" / f"{mech}_seed{seed}.json")
                ev = evaluate(model, pairs, mode, th, seed)
                evaluations.setdefault(ev.label, []).append(ev)
    reports = []
    summary = {}
    for label in sorted(evaluations):
        evs = evaluations[label]
        cases = [c for ev in evs for c in ev.report.cases]
        ids = [f"{k}:{cid}" for k, ev in enumerate(evs) for cid in ev.report.case_ids]
        rep = D.corpus_report(cases, label, ids)
        reports.append(rep)
        summary[label] = {"failure_rate": float(np.mean([ev.report.failure_rate for ev in evs])),
                          "dominant_error": rep.dominant_error(), "totals": rep.totals()}
        (out / f"classification_{label}.csv").write_text(rep.cases_csv())
    (out / "report.csv").write_text(D.reports_csv(reports))
    (out / "report.txt").write_text(D.reports_table(reports))
    rates = {k: v["failure_rate"] for k, v in summary.items()}
    trend_ok = None
    if "sma" in rates and len(rates) > 1:
        trend_ok = all(rates["sma"] < r for k, r in rates.items() if k != "sma")
    write_manifest(out, "stress", cfg, inputs, {"summary": summary, "sma_lowest": trend_ok})
    print(D.reports_table(reports), end="")
    if trend_ok is not None:
        print(f"sma soft strictly lowest failure rate: {'yes' if trend_ok else 'no'}")
    return EXIT_ACCEPTANCE if trend_ok is False else EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "infer": cmd_infer, "diagnose": cmd_diagnose,
            "oracle": cmd_oracle, "stress": cmd_stress}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stepmono", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False):
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override the run seed")
        if data:
            p.add_argument("--data", help="JSON-lines dataset (defaults to the generated split)")
        return p

    common(sub.add_parser("gen", help="generate train/heldout/stress datasets"))
    common(sub.add_parser("train", help="train a toy model"), data=True)
    p = common(sub.add_parser("infer", help="free-running inference with alignment dumps"), data=True)
    p.add_argument("--checkpoint", help="checkpoint written by train")
    p = common(sub.add_parser("diagnose", help="error taxonomy over infer outputs"))
    p.add_argument("--input", help="directory written by infer")
    p = sub.add_parser("oracle", help="check the alignment recursions against exact enumeration")
    p.add_argument("--random", type=int, help="number of random instances (default 100)")
    p.add_argument("--seed", type=int)
    p.add_argument("--p-matrix", help="CSV file of a T x n selection-probability matrix")
    p.add_argument("--family", choices=("sma", "ma"), default="sma")
    p.add_argument("--edge-policy", choices=K.EDGE_POLICIES, default="leak")
    p.add_argument("--out")
    p = common(sub.add_parser("stress", help="compare mechanisms on the stress split"), data=True)
    p.add_argument("--checkpoint", action="append",
                   help="evaluate an existing checkpoint, as PATH or MODE=PATH (repeatable)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - any crash maps to the runtime exit code
        log.exception("command failed")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
