"""Experiment runners shared by the CLI, the scripts and the acceptance suite.

* ``rollout_ablation``: train on a few target problems only, once per rollout
  budget G, and track held-out probe problems on the side.
* ``cluster_dynamics``: uniform-pool GRPO, with problems bucketed by their
  initial pass rate.
* ``stage_ablation``: warm start only, stage one only, stage two only and the
  full pipeline, scored on a held-out split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .corpus import Problem
from .curriculum import (
    PipelineConfig, PipelineResult, Pools, SplitConfig, StageConfig, run_pipeline, split_pools,
)
from .grpo import GrpoConfig, train_step
from .metrics import ClusterTrace, DEFAULT_EDGES, EvalResult, cluster_trace, evaluate, mean_avg_at_1
from .optim import OptimizerState
from .policy import PolicyParams
from .warmstart import CurationPlan, warm_start


def pass_rates(params: PolicyParams, problems: Sequence[Problem], n: int, *, seed: int, tag: str,
               t_max: int, temperature: float = 1.0, workers: int = 1) -> dict[str, float]:
    res = evaluate(params, problems, n, temperature, seed=seed, t_max=t_max, workers=workers, purpose=tag)
    return {r.problem_id: r.avg_at_1 for r in res}


def steps_to_threshold(series: Sequence[float], threshold: float) -> float:
    """Index of the first entry >= threshold (entry 0 is before training); inf if never."""
    for i, v in enumerate(series):
        if v >= threshold:
            return float(i)
    return math.inf


@dataclass
class BudgetRun:
    group_size: int
    series: list[float]  # mean target pass rate before training and after each step
    probe_before: dict[str, float]
    probe_after: dict[str, float]
    steps_to_threshold: float

    @property
    def probe_shift(self) -> float:
        if not self.probe_before:
            return 0.0
        return float(np.mean([self.probe_after[k] - self.probe_before[k] for k in self.probe_before]))


def rollout_ablation(init: PolicyParams, targets: Sequence[Problem], budgets: Sequence[int], *, steps: int,
                     seed: int, t_max: int = 16, eval_rollouts: int = 32, threshold: float = 0.5,
                     probes: Sequence[Problem] = (), grpo: GrpoConfig | None = None,
                     workers: int = 1) -> list[BudgetRun]:
    """Fresh GRPO runs from ``init`` on the targets alone, one per budget.

    Pass rates are measured with ``eval_rollouts`` samples from evaluation
    streams keyed by step, so every budget is scored on identical draws.
    ``init`` is never modified.
    """
    if not targets:
        raise ValueError("no target problems")
    if len(budgets) < 2:
        raise ValueError("need at least two rollout budgets")
    base = grpo or GrpoConfig()
    probe_before = pass_rates(init, probes, eval_rollouts, seed=seed, tag="ablate-probe", t_max=t_max)
    runs = []
    for g in budgets:
        cfg = replace(base, group_size=g, t_max=t_max)
        params, opt = init, OptimizerState.for_params(init)

        def score(p, step):
            return float(np.mean(list(pass_rates(p, targets, eval_rollouts, seed=seed, tag=f"ablate-eval-{step}",
                                                  t_max=t_max).values())))

        series = [score(params, 0)]
        for step in range(steps):
            params, opt, _, _ = train_step(params, opt, targets, cfg, seed=seed, step=step, stage=f"ablate-{g}",
                                           workers=workers)
            series.append(score(params, step + 1))
        after = pass_rates(params, probes, eval_rollouts, seed=seed, tag="ablate-probe", t_max=t_max)
        runs.append(BudgetRun(g, series, probe_before, after, steps_to_threshold(series, threshold)))
    return runs


def pick_ablation_target(init: PolicyParams, candidates: Sequence[Problem], *, seed: int, n: int = 256,
                         t_max: int = 16, max_density: float = 1e-3) -> Problem:
    """The hard, sparse problem the init solves least often without never solving it.

    Falls back to the lowest-rate candidate when every one is at zero.
    """
    pool = [p for p in candidates if p.difficulty == "hard" and p.solution_density < max_density]
    if not pool:
        raise ValueError("no hard candidate below the density bound")
    rates = pass_rates(init, pool, n, seed=seed, tag="ablate-pick", t_max=t_max)
    live = [p for p in pool if rates[p.id] > 0] or pool
    return min(live, key=lambda p: (rates[p.id], p.id))


@dataclass
class ClusterRun:
    initial: dict[str, float]
    checkpoints: list[int]  # steps at which pass rates were measured
    per_checkpoint: list[dict[str, float]]
    clusters: list[ClusterTrace]
    trace: list = field(default_factory=list)

    def gain(self, label: str) -> float:
        return next(c.gain for c in self.clusters if c.label == label)


def cluster_dynamics(init: PolicyParams, pool: Sequence[Problem], *, seed: int, steps: int = 32,
                     group_size: int = 8, t_max: int = 16, eval_rollouts: int = 32, eval_every: int = 8,
                     edges: Sequence[float] = DEFAULT_EDGES, grpo: GrpoConfig | None = None,
                     workers: int = 1) -> ClusterRun:
    """Uniform-pool training, bucketed by the pass rate measured before step 0."""
    base = grpo or GrpoConfig()
    stage = StageConfig(stage="one", steps=eval_every, group_size=group_size, t_max=t_max)
    checkpoints = list(range(0, steps + 1, eval_every))
    if checkpoints[-1] != steps:
        checkpoints.append(steps)
    params = init
    measured = [pass_rates(params, pool, eval_rollouts, seed=seed, tag="cluster-eval", t_max=t_max,
                           workers=workers)]
    trace = []
    done = 0
    opt = OptimizerState.for_params(params)
    cfg = stage.grpo(base)
    for target in checkpoints[1:]:
        while done < target:
            params, opt, report, _ = train_step(params, opt, list(pool), cfg, seed=seed, step=done, stage="one",
                                                workers=workers)
            trace.append(report)
            done += 1
        measured.append(pass_rates(params, pool, eval_rollouts, seed=seed, tag="cluster-eval", t_max=t_max,
                                   workers=workers))
    return ClusterRun(measured[0], checkpoints, measured, cluster_trace(measured[0], measured, edges), trace)


VARIANTS = ("warmstart_only", "stage1_only", "stage2_only", "full")


@dataclass
class StageAblation:
    pools: Pools
    heldout_avg1: dict[str, float]
    results: dict[str, PipelineResult]
    evals: dict[str, list[EvalResult]]


def stage_ablation(problems: Sequence[Problem], config: PipelineConfig, *, seed: int, split: SplitConfig,
                   eval_samples: int = 32, eval_t_max: int = 24, eval_seed: int = 0,
                   workers: int = 1) -> StageAblation:
    """The four pipeline shapes from one shared warm start, scored on held-out avg@1."""
    by_id = {p.id: p for p in problems}
    pools = split_pools(problems, split, seed)
    s1 = [by_id[i] for i in pools.stage1]
    s2 = [by_id[i] for i in pools.stage2]
    held = [by_id[i] for i in pools.heldout]
    init, _, _ = warm_start([by_id[i] for i in pools.training], config.curation, seed=seed)
    shapes = {
        "warmstart_only": dict(skip_stage1=True, skip_stage2=True),
        "stage1_only": dict(skip_stage1=False, skip_stage2=True),
        "stage2_only": dict(skip_stage1=True, skip_stage2=False),
        "full": dict(skip_stage1=False, skip_stage2=False),
    }
    results, evals, scores = {}, {}, {}
    for name, flags in shapes.items():
        res = run_pipeline(s1, s2, replace(config, **flags), seed=seed, init=init, workers=workers)
        ev = evaluate(res.params, held, eval_samples, seed=eval_seed, t_max=eval_t_max, purpose="heldout",
                      workers=workers)
        results[name], evals[name], scores[name] = res, ev, mean_avg_at_1(ev)
    return StageAblation(pools, scores, results, evals)


def warm_init(problems: Sequence[Problem], plan: CurationPlan, *, seed: int) -> PolicyParams:
    params, _, _ = warm_start(problems, plan, seed=seed)
    return params
