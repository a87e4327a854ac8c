"""Verifiable rewards: run a candidate program on a problem's hidden cases."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from .corpus import Problem
from .lang import Program, Status, execute

MODES = ("binary", "fractional")


@dataclass(frozen=True)
class CaseResult:
    passed: bool
    status: Status


@dataclass(frozen=True)
class Verdict:
    per_case: tuple[CaseResult, ...]
    reward: float
    all_passed: bool


def judge(program: Program, problem: Problem, mode: str = "binary") -> Verdict:
    if mode not in MODES:
        raise ValueError(f"unknown reward mode {mode!r}")
    n = len(problem.hidden_cases)
    if program.truncated:
        per_case = tuple(CaseResult(False, Status.TRUNCATED) for _ in range(n))
        return Verdict(per_case, 0.0, False)
    results = []
    for case in problem.hidden_cases:
        out = execute(program, case.inputs)
        results.append(CaseResult(out.ok and out.outputs == case.expected_outputs, out.status))
    n_pass = sum(r.passed for r in results)
    all_passed = n_pass == n
    if mode == "binary":
        reward = 1.0 if all_passed else 0.0
    else:
        reward = n_pass / n
    return Verdict(tuple(results), reward, all_passed)


def judge_batch(programs: Sequence[Program], problem: Problem, mode: str = "binary", workers: int = 1) -> list[Verdict]:
    """Judge every program; results come back in input order for any worker count."""
    if workers <= 1 or len(programs) <= 1:
        return [judge(p, problem, mode) for p in programs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda p: judge(p, problem, mode), programs))
