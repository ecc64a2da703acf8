"""Alignment quality metrics and the collapse / repeat / skip error taxonomy.

Soft alignments are judged on their row maxima (locality), their argmax path
(monotonicity) and their column sums (completeness).  Hard paths are turned
into one-hot rows first, so both representations give identical metrics.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hard_decoder import HardAlignmentPath

ERROR_CLASSES = ("collapse", "repeat", "skip", "unreached")


@dataclass(frozen=True)
class Thresholds:
    w_min: float = 0.5  # locality floor on the row maximum
    collapse_run: int = 5  # consecutive low-locality frames that make a collapse
    c_min: float = 0.5  # frames of coverage below which a token counts as skipped
    collapse_tol: int = 0
    repeat_tol: int = 0
    skip_tol: int = 0
    unreached_tol: int = 0

    def __post_init__(self):
        if not 0 <= self.w_min <= 1 or self.c_min < 0 or self.collapse_run < 1:
            raise ValueError("invalid diagnostic thresholds")
        if min(self.collapse_tol, self.repeat_tol, self.skip_tol, self.unreached_tol) < 0:
            raise ValueError("tolerances must be nonnegative")


@dataclass
class AlignmentMetrics:
    max_weight: np.ndarray  # (T,)
    entropy: np.ndarray  # (T,)
    argmax_path: np.ndarray  # (T,)
    coverage: np.ndarray  # (n,) column sums
    violations: int  # argmax decreases
    gaps: np.ndarray  # tokens with coverage below c_min
    past_end: bool = False  # a hard path that scanned off the end of memory

    @property
    def n(self) -> int:
        return len(self.coverage)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame", "max_weight", "entropy", "argmax"])
        for i, (m, h, a) in enumerate(zip(self.max_weight, self.entropy, self.argmax_path)):
            w.writerow([i, repr(float(m)), repr(float(h)), int(a)])
        return buf.getvalue()


@dataclass
class ErrorClassification:
    collapse_frames: int
    repeat_events: int
    skip_events: int
    unreached_tokens: int
    case_failed: bool

    def counts(self) -> dict[str, int]:
        return {"collapse": self.collapse_frames, "repeat": self.repeat_events,
                "skip": self.skip_events, "unreached": self.unreached_tokens}


def path_to_rows(path, n: int) -> np.ndarray:
    positions = np.asarray(path.positions if isinstance(path, HardAlignmentPath) else path, dtype=int)
    if positions.size and (positions.min() < 0 or positions.max() >= n):
        raise ValueError("path index outside memory")
    rows = np.zeros((len(positions), n))
    rows[np.arange(len(positions)), positions] = 1.0
    return rows


def compute_metrics(alignment, n: int, c_min: float = Thresholds.c_min) -> AlignmentMetrics:
    """Metrics for an alignment matrix (T, n) or a hard path over ``n`` entries."""
    past_end = False
    if isinstance(alignment, HardAlignmentPath):
        past_end = alignment.terminated_past_end
        rows = path_to_rows(alignment, n)
    else:
        rows = np.asarray(alignment, dtype=float)
        if rows.ndim == 1:
            rows = path_to_rows(rows, n)
    if rows.ndim != 2 or rows.shape[1] != n:
        raise ValueError(f"alignment must have shape (T, {n})")
    if np.any(rows < 0):
        raise ValueError("alignment weights must be nonnegative")
    mass = rows.sum(axis=1)
    safe = np.where(mass > 0, mass, 1.0)[:, None]
    q = rows / safe
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -np.sum(np.where(q > 0, q * np.log(q), 0.0), axis=1)
    # a row with no mass is as unfocused as it gets
    ent = np.where(mass > 0, np.clip(ent, 0.0, np.log(n)), np.log(n))
    path = np.argmax(rows, axis=1) if len(rows) else np.zeros(0, dtype=int)
    coverage = rows.sum(axis=0)
    return AlignmentMetrics(
        max_weight=rows.max(axis=1) if len(rows) else np.zeros(0),
        entropy=ent,
        argmax_path=path,
        coverage=coverage,
        violations=int(np.sum(np.diff(path) < 0)),
        gaps=np.flatnonzero(coverage < c_min),
        past_end=past_end,
    )


def _collapse_frames(max_weight: np.ndarray, w_min: float, run: int) -> int:
    low = np.concatenate([[False], max_weight < w_min, [False]]).astype(int)
    edges = np.diff(low)
    starts, ends = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    lengths = ends - starts
    return int(lengths[lengths >= run].sum())


def _repeat_events(path: np.ndarray) -> int:
    """Rewinds of the attended position onto a token the path already visited."""
    seen: set[int] = set()
    events = 0
    prev = None
    for j in path.tolist():
        if prev is not None and j < prev and j in seen:
            events += 1
        seen.add(j)
        prev = j
    return events


def classify_errors(metrics: AlignmentMetrics, thresholds: Thresholds | None = None,
                    exempt: np.ndarray | None = None) -> ErrorClassification:
    """Count collapse frames, repeat events and skipped tokens.

    ``exempt`` marks tokens excluded from completeness accounting (tokens
    with no frames of their own).  A token with too little coverage is a
    skip when the attention later moved past it, or when a hard path
    scanned off the end; tokens beyond the furthest attended position of a
    path that simply stopped are counted as ``unreached`` instead.
    """
    th = thresholds or Thresholds()
    n = metrics.n
    exempt_mask = np.zeros(n, bool) if exempt is None else np.asarray(exempt, bool)
    if exempt_mask.shape != (n,):
        raise ValueError("exempt mask must have one entry per token")
    collapse = _collapse_frames(metrics.max_weight, th.w_min, th.collapse_run)
    repeats = _repeat_events(metrics.argmax_path)
    low = (metrics.coverage < th.c_min) & ~exempt_mask
    furthest = int(metrics.argmax_path.max()) if len(metrics.argmax_path) else -1
    interior = np.arange(n) <= furthest
    if metrics.past_end:
        interior[:] = True
    skips = int(np.sum(low & interior))
    unreached = int(np.sum(low & ~interior))
    failed = (collapse > th.collapse_tol or repeats > th.repeat_tol or skips > th.skip_tol
              or unreached > th.unreached_tol)
    return ErrorClassification(collapse, repeats, skips, unreached, bool(failed))


# -- corpus level ---------------------------------------------------------------

@dataclass
class CorpusReport:
    mechanism: str
    cases: list[ErrorClassification] = field(default_factory=list)
    case_ids: list[str] = field(default_factory=list)

    @property
    def n_cases(self) -> int:
        return len(self.cases)

    @property
    def failure_rate(self) -> float:
        return sum(c.case_failed for c in self.cases) / len(self.cases)

    def totals(self) -> dict[str, int]:
        out = dict.fromkeys(ERROR_CLASSES, 0)
        for c in self.cases:
            for k, v in c.counts().items():
                out[k] += v
        return out

    def dominant_error(self) -> str | None:
        totals = self.totals()
        best = max(ERROR_CLASSES, key=lambda k: totals[k])
        return best if totals[best] > 0 else None

    def cases_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mechanism", "case", *ERROR_CLASSES, "failed"])
        for cid, c in zip(self.case_ids, self.cases):
            w.writerow([self.mechanism, cid, *c.counts().values(), int(c.case_failed)])
        return buf.getvalue()


def corpus_report(cases: list[ErrorClassification], mechanism: str,
                  case_ids: list[str] | None = None) -> CorpusReport:
    if not cases:
        raise ValueError("corpus_report needs at least one case")
    ids = case_ids if case_ids is not None else [str(i) for i in range(len(cases))]
    if len(ids) != len(cases):
        raise ValueError("one id per case")
    return CorpusReport(mechanism, list(cases), list(ids))


def reports_csv(reports: list[CorpusReport]) -> str:
    """One row per mechanism and error class, plus a failure-rate row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mechanism", "measure", "value"])
    for r in reports:
        w.writerow([r.mechanism, "failure_rate", repr(r.failure_rate)])
        for k, v in r.totals().items():
            w.writerow([r.mechanism, k, v])
    return buf.getvalue()


def reports_table(reports: list[CorpusReport]) -> str:
    header = f"{'mechanism':<14}{'cases':>7}{'failed':>9}" + "".join(f"{k:>11}" for k in ERROR_CLASSES)
    lines = [header, "-" * len(header)]
    for r in reports:
        t = r.totals()
        lines.append(f"{r.mechanism:<14}{r.n_cases:>7}{r.failure_rate:>9.3f}"
                     + "".join(f"{t[k]:>11}" for k in ERROR_CLASSES))
    return "\n".join(lines) + "\n"


# -- artifacts ------------------------------------------------------------------

def alignment_to_csv(alignment: np.ndarray) -> str:
    return "".join(",".join(repr(float(x)) for x in row) + "\n" for row in np.atleast_2d(alignment))


def alignment_from_csv(text: str) -> np.ndarray:
    rows = [[float(x) for x in line.split(",")] for line in text.splitlines() if line]
    return np.array(rows)


def render_alignment_heatmap(alignment: np.ndarray, path: Path) -> tuple[Path, Path]:
    """Write ``<path>.pgm`` (max-scaled 8-bit grayscale, rows = frames) and ``<path>.csv``."""
    a = np.atleast_2d(np.asarray(alignment, dtype=float))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    peak = a.max() if a.size else 0.0
    pixels = np.zeros(a.shape, np.uint8) if peak <= 0 else np.rint(255 * a / peak).astype(np.uint8)
    pgm = path.with_suffix(".pgm")
    with open(pgm, "wb") as fh:
        fh.write(f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode())
        fh.write(pixels.tobytes())
    csv_path = path.with_suffix(".csv")
    csv_path.write_text(alignment_to_csv(a))
    return pgm, csv_path


def read_pgm(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, dims, maxval, rest = data.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise ValueError("not an 8-bit binary PGM")
    w, h = map(int, dims.split())
    return np.frombuffer(rest, np.uint8).reshape(h, w)
