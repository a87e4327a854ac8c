"""Evaluation estimators, diagnostics and report files."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import rng as rngmod
from .corpus import Problem
from .grpo import StepReport
from .judge import judge_batch
from .policy import PolicyParams, greedy, problem_features, sample_batch

REPORT_SCHEMA = "stackgrpo.report/1"
DEFAULT_EDGES = (0.0, 0.25, 0.75, 1.0)
BUCKET_LABELS = ("low", "medium", "high")


class DomainError(ValueError):
    pass


class ReportIOError(OSError):
    def __init__(self, path, cause):
        super().__init__(f"cannot write {path}: {cause}")
        self.path = str(path)


def _check_counts(n: int, c: int, k: int) -> None:
    if not (isinstance(n, (int, np.integer)) and isinstance(c, (int, np.integer)) and isinstance(k, (int, np.integer))):
        raise DomainError("n, c, k must be integers")
    if not 0 <= c <= n or not 1 <= k <= n:
        raise DomainError(f"need 0 <= c <= n and 1 <= k <= n, got n={n} c={c} k={k}")


EXACT_LIMIT = 1024


def pass_at_k_exact(n: int, c: int, k: int) -> Fraction:
    """1 - C(n-c, k) / C(n, k) as an exact rational."""
    _check_counts(n, c, k)
    return 1 - Fraction(math.comb(n - c, k), math.comb(n, k))


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased pass@k estimate from n samples with c passes.

    Up to ``EXACT_LIMIT`` samples this is the exact rational rounded once to a
    float. Beyond that it uses 1 - prod_{i=n-c+1}^{n} (1 - k/i), which avoids
    huge binomials.
    """
    _check_counts(n, c, k)
    if n - c < k:
        return 1.0
    if n <= EXACT_LIMIT:
        return float(pass_at_k_exact(n, c, k))
    i = np.arange(n - c + 1, n + 1, dtype=np.float64)
    return float(1.0 - np.prod(1.0 - k / i))


@dataclass(frozen=True)
class EvalResult:
    problem_id: str
    n: int
    c: int
    pass_at_k: dict[int, float]
    avg_at_1: float
    difficulty: str = ""


def evaluate(params: PolicyParams, problems: Sequence[Problem], n_samples: int, temperature: float = 1.0, *,
             seed: int = 0, ks: Sequence[int] = (1,), t_max: int = 24, use_greedy: bool = False,
             workers: int = 1, purpose: str = "eval") -> list[EvalResult]:
    """Sample ``n_samples`` programs per problem and score them.

    With ``use_greedy`` every sample is the argmax decode, so c is 0 or n.
    Rollouts come from the stream (seed, purpose, problem id); params are
    never modified.
    """
    if n_samples < max(ks, default=1):
        raise DomainError("n_samples must be >= every requested k")

    def one(problem: Problem) -> EvalResult:
        feats = problem_features(problem, params.n_features)
        if use_greedy:
            programs = [greedy(params, feats, t_max)] * n_samples
        else:
            u = rngmod.stream(seed, purpose, problem.id).random((n_samples, t_max))
            programs = [s.program for s in sample_batch(params, feats, temperature, t_max, u)]
        c = sum(v.all_passed for v in judge_batch(programs, problem))
        return EvalResult(problem.id, n_samples, c, {k: pass_at_k(n_samples, c, k) for k in ks},
                          c / n_samples, problem.difficulty)

    if workers <= 1:
        return [one(p) for p in problems]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, problems))


def mean_avg_at_1(results: Sequence[EvalResult]) -> float:
    return float(np.mean([r.avg_at_1 for r in results])) if results else float("nan")


def repetition_rate(tokens: Sequence[int]) -> float:
    """Share of bigram units that repeat the unit right before them.

    The program is tiled into non-overlapping bigrams from position 0 (an odd
    final token is its own unit).  Programs shorter than 4 tokens score 0.
    IN OUT IN OUT IN OUT EOS has units (IN OUT)(IN OUT)(IN OUT)(EOS): two
    repeats out of four units, so 0.5.
    """
    toks = list(getattr(tokens, "tokens", tokens))
    if not toks:
        raise DomainError("empty program")
    if len(toks) < 4:
        return 0.0
    units = [tuple(toks[i:i + 2]) for i in range(0, len(toks), 2)]
    repeats = sum(a == b for a, b in zip(units, units[1:]))
    return repeats / len(units)


@dataclass
class ClusterTrace:
    label: str
    lo: float
    hi: float
    problem_ids: list[str]
    series: np.ndarray  # mean pass rate per step; NaN when the bucket is empty
    empty: bool = False

    @property
    def gain(self) -> float:
        if self.empty or len(self.series) == 0:
            return float("nan")
        return float(self.series[-1] - self.series[0])


def bucket_of(rate: float, edges: Sequence[float]) -> int:
    """Index of the half-open bucket [e_i, e_i+1) holding ``rate``; the last bucket is closed."""
    for i in range(len(edges) - 1):
        if rate < edges[i + 1] or i == len(edges) - 2:
            return i
    raise AssertionError("unreachable")


def cluster_trace(initial_pass_rates: Mapping[str, float], per_step_pass_rates: Sequence[Mapping[str, float]],
                  bucket_edges: Sequence[float] = DEFAULT_EDGES,
                  labels: Sequence[str] | None = None) -> list[ClusterTrace]:
    """Group problems by initial pass rate and average their per-step rates per bucket."""
    edges = [float(e) for e in bucket_edges]
    if len(edges) < 2 or edges[0] != 0.0 or edges[-1] != 1.0 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise DomainError("bucket edges must increase strictly from 0 to 1")
    n_b = len(edges) - 1
    if labels is None:
        labels = BUCKET_LABELS if n_b == 3 else tuple(f"b{i}" for i in range(n_b))
    members: list[list[str]] = [[] for _ in range(n_b)]
    for pid in sorted(initial_pass_rates):
        members[bucket_of(initial_pass_rates[pid], edges)].append(pid)
    n_steps = len(per_step_pass_rates)
    out = []
    for i in range(n_b):
        ids = members[i]
        if ids:
            series = np.array([np.mean([step[pid] for pid in ids]) for step in per_step_pass_rates])
        else:
            series = np.full(n_steps, np.nan)
        out.append(ClusterTrace(labels[i], edges[i], edges[i + 1], ids, series, empty=not ids))
    return out


TRACE_COLUMNS = ("step", "stage", "phase", "mean_reward", "mean_entropy", "truncation_rate", "loss", "kl")
EVAL_COLUMNS = ("problem_id", "difficulty", "n", "c", "avg_at_1")


def trace_rows(traces: Sequence[StepReport]) -> list[dict]:
    return [{c: getattr(t, c) for c in TRACE_COLUMNS} for t in traces]


def eval_rows(results: Sequence[EvalResult]) -> list[dict]:
    ks = sorted({k for r in results for k in r.pass_at_k})
    rows = []
    for r in results:
        row = {"problem_id": r.problem_id, "difficulty": r.difficulty, "n": r.n, "c": r.c, "avg_at_1": r.avg_at_1}
        row.update({f"pass_at_{k}": r.pass_at_k.get(k) for k in ks})
        rows.append(row)
    return rows


def _csv_text(columns: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    buf.write(f"# {REPORT_SCHEMA}\n")
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({c: repr(v) if isinstance(v, float) else v for c, v in row.items()})
    return buf.getvalue()


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def read_csv(path) -> tuple[str, list[dict]]:
    """Schema tag and typed rows of a report CSV."""
    with open(path, newline="") as fh:
        tag = fh.readline().lstrip("# ").strip()
        return tag, [{k: _parse_value(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _write(path, text: str) -> str:
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ReportIOError(path, exc) from exc
    return str(path)


def _eval_columns(rows: Sequence[dict]) -> list[str]:
    extra = sorted({c for r in rows for c in r if c.startswith("pass_at_")}, key=lambda c: int(c[8:]))
    return list(EVAL_COLUMNS) + extra


def emit_report(out_dir, traces: Sequence[StepReport] = (), eval_results: Sequence[EvalResult] = (),
                formats: Sequence[str] = ("csv", "json", "svg"),
                clusters: Sequence[ClusterTrace] = (), budgets: Mapping[int, Sequence[float]] | None = None,
                name: str = "report") -> list[str]:
    """Write trace/eval tables (csv, json) and charts (svg); returns the paths written."""
    unknown = set(formats) - {"csv", "json", "svg"}
    if unknown:
        raise DomainError(f"unknown report formats {sorted(unknown)}")
    t_rows, e_rows = trace_rows(traces), eval_rows(eval_results)
    written = []
    if "csv" in formats:
        written.append(_write(os.path.join(out_dir, f"{name}_trace.csv"), _csv_text(TRACE_COLUMNS, t_rows)))
        written.append(_write(os.path.join(out_dir, f"{name}_eval.csv"), _csv_text(_eval_columns(e_rows), e_rows)))
        if traces:
            ids = sorted({pid for t in traces for pid in t.pass_rates})
            rows = [{"step": t.step, **{pid: t.pass_rates.get(pid, "") for pid in ids}} for t in traces]
            written.append(_write(os.path.join(out_dir, f"{name}_pass_rates.csv"),
                                  _csv_text(["step", *ids], rows)))
    if "json" in formats:
        doc = {"schema": REPORT_SCHEMA, "trace": t_rows, "eval": e_rows,
               "clusters": [{"label": c.label, "lo": c.lo, "hi": c.hi, "problem_ids": c.problem_ids,
                             "series": [None if np.isnan(x) else float(x) for x in c.series], "empty": c.empty}
                            for c in clusters]}
        if budgets:
            doc["budgets"] = {str(g): [float(x) for x in s] for g, s in budgets.items()}
        written.append(_write(os.path.join(out_dir, f"{name}.json"), json.dumps(doc, indent=1, sort_keys=True)))
    if "svg" in formats:
        written.append(_write(os.path.join(out_dir, f"{name}.svg"), render_svg(traces, clusters, budgets)))
    return written


def render_svg(traces: Sequence[StepReport] = (), clusters: Sequence[ClusterTrace] = (),
               budgets: Mapping[int, Sequence[float]] | None = None) -> str:
    """Line charts of entropy/truncation, bucket trajectories and rollout-budget curves."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    panels = 1 + bool(clusters) + bool(budgets)
    with matplotlib.rc_context({"svg.hashsalt": "stackgrpo", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(1, panels, figsize=(4.5 * panels, 3.2), squeeze=False)
        ax = axes[0][0]
        steps = [t.step for t in traces]
        ax.plot(steps, [t.mean_entropy for t in traces], label="entropy")
        ax.plot(steps, [t.truncation_rate for t in traces], label="truncation")
        ax.set_xlabel("step")
        ax.legend(loc="best")
        i = 1
        if clusters:
            ax = axes[0][i]
            for c in clusters:
                if not c.empty:
                    ax.plot(np.arange(len(c.series)), c.series, label=f"{c.label} ({len(c.problem_ids)})")
            ax.set_xlabel("step")
            ax.set_ylabel("mean pass rate")
            ax.legend(loc="best")
            i += 1
        if budgets:
            ax = axes[0][i]
            for g, s in sorted(budgets.items()):
                ax.plot(np.arange(len(s)), s, label=f"G={g}")
            ax.set_xlabel("step")
            ax.set_ylabel("pass rate")
            ax.legend(loc="best")
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()
