"""Supervised warm start and the three data-curation strategies."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import rng as rngmod
from .corpus import Problem
from .judge import judge_batch
from .lang import Program
from .optim import AdamConfig, OptimizerState, adam_step
from .policy import PolicyGrad, PolicyParams, StepBatch, problem_features, sample_batch

STRATEGIES = ("basic", "arena", "twice_hard")


@dataclass(frozen=True)
class SupervisedExample:
    problem: Problem
    target: tuple[int, ...]  # token ids of the oracle's minimal program
    weight: float = 1.0

    @property
    def problem_id(self) -> str:
        return self.problem.id


@dataclass(frozen=True)
class CurationPlan:
    strategy: str = "twice_hard"
    folds: int = 5
    epochs: int = 6
    learning_rate: float = 0.05
    batch_size: int = 8
    probe_rollouts: int = 8
    probe_epochs: int = 6
    probe_t_max: int = 16
    probe_temperature: float = 1.0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.strategy != "basic" and self.folds < 2:
            raise ValueError("arena curation needs folds >= 2")


@dataclass(frozen=True)
class CurationRecord:
    id: str
    fold: int
    probe_pass_count: int | None
    retained: bool
    weight: float


def example_for(problem: Problem, weight: float = 1.0) -> SupervisedExample:
    return SupervisedExample(problem, problem.reference.tokens, weight)


def _check_unique(problems: Sequence[Problem]) -> None:
    ids = [p.id for p in problems]
    if len(set(ids)) != len(ids) or any(p.replica for p in problems):
        raise ValueError("curation expects unique problem ids (no duplicated-hard replicas)")


def supervised_loss_grad(params: PolicyParams, batch: Sequence[SupervisedExample]) -> tuple[float, PolicyGrad]:
    """Weighted mean negative sequence log-likelihood and its gradient."""
    total_w = sum(ex.weight for ex in batch)
    loss = 0.0
    grad = PolicyGrad.zeros_like(params)
    by_problem: dict[str, list[SupervisedExample]] = {}
    for ex in batch:
        by_problem.setdefault(ex.problem_id, []).append(ex)
    for exs in by_problem.values():
        feats = problem_features(exs[0].problem, params.n_features)
        sb = StepBatch([Program.from_tokens(ex.target) for ex in exs], params.w_ctx)
        logp, p = sb.forward(params, feats)
        w = np.array([ex.weight for ex in exs]) / total_w
        seq_lp = sb.seq_sum(sb.token_logprobs(logp))
        loss -= float(w @ seq_lp)
        dz = -w[sb.seq][:, None] * sb.onehot_minus_p(p)
        grad = grad + sb.backward(dz, feats, params)
    return loss, grad


def supervised_step(params: PolicyParams, opt_state: OptimizerState, batch: Sequence[SupervisedExample],
                    adam: AdamConfig) -> tuple[PolicyParams, OptimizerState, float]:
    """One optimizer step on the weighted cross-entropy; returns the pre-update loss."""
    if not batch:
        raise ValueError("empty batch")
    loss, grad = supervised_loss_grad(params, batch)
    params, opt_state = adam_step(params, opt_state, grad, adam)
    return params, opt_state, loss


def train_supervised(params: PolicyParams, examples: Sequence[SupervisedExample], *, epochs: int,
                     learning_rate: float, batch_size: int, seed: int, purpose: str = "sft") -> PolicyParams:
    if not examples:
        return params
    adam = AdamConfig(learning_rate=learning_rate)
    state = OptimizerState.for_params(params)
    for epoch in range(epochs):
        order = rngmod.stream(seed, purpose, epoch).permutation(len(examples))
        for start in range(0, len(order), batch_size):
            batch = [examples[i] for i in order[start:start + batch_size]]
            params, state, _ = supervised_step(params, state, batch, adam)
    return params


def curate_basic(problems: Sequence[Problem]) -> list[SupervisedExample]:
    _check_unique(problems)
    return [example_for(p) for p in problems]


def split_folds(problems: Sequence[Problem], folds: int) -> list[list[Problem]]:
    """Contiguous folds in corpus order; sizes differ by at most one."""
    bounds = np.linspace(0, len(problems), folds + 1).round().astype(int)
    return [list(problems[bounds[i]:bounds[i + 1]]) for i in range(folds)]


PassCounter = Callable[[PolicyParams, Problem, int], int]


def probe_pass_count(params: PolicyParams, problem: Problem, plan: CurationPlan, seed: int, fold: int) -> int:
    gen = rngmod.stream(seed, "arena-probe", fold, problem.id)
    u = gen.random((plan.probe_rollouts, plan.probe_t_max))
    seqs = sample_batch(params, problem_features(problem, params.n_features), plan.probe_temperature,
                        plan.probe_t_max, u)
    return sum(v.all_passed for v in judge_batch([s.program for s in seqs], problem))


def _arena(problems: Sequence[Problem], plan: CurationPlan, seed: int, init: PolicyParams | None,
           count_passes: PassCounter | None):
    _check_unique(problems)
    folds = split_folds(problems, plan.folds)
    probe = init if init is not None else PolicyParams.zeros()
    records: list[CurationRecord] = []
    kept = [example_for(p) for p in folds[0]]
    records += [CurationRecord(p.id, 0, None, True, 1.0) for p in folds[0]]
    hard: list[Problem] = []
    train_set = list(kept)
    for k, fold in enumerate(folds):
        if k > 0:
            retained = []
            for p in fold:
                if count_passes is not None:
                    n_pass = count_passes(probe, p, k)
                else:
                    n_pass = probe_pass_count(probe, p, plan, seed, k)
                records.append(CurationRecord(p.id, k, int(n_pass), n_pass == 0, 1.0))
                if n_pass == 0:
                    retained.append(p)
            hard += retained
            train_set = [example_for(p) for p in retained]
        if k < len(folds) - 1 and train_set:
            probe = train_supervised(probe, train_set, epochs=plan.probe_epochs, learning_rate=plan.learning_rate,
                                     batch_size=plan.batch_size, seed=seed, purpose=f"arena-train-{k}")
    return kept, hard, records


def curate_arena(problems: Sequence[Problem], folds: int, probe_config: CurationPlan | None = None, *,
                 seed: int = 0, init: PolicyParams | None = None,
                 count_passes: PassCounter | None = None) -> list[SupervisedExample]:
    """Fold-1 examples plus every later-fold problem the probe never solves.

    The probe trains on fold 1, then on each fold's retained failures before
    moving to the next fold.  ``count_passes(params, problem, fold)`` replaces
    the sampled probe when given.
    """
    plan = _plan_with(probe_config, "arena", folds)
    kept, hard, _ = _arena(problems, plan, seed, init, count_passes)
    return kept + [example_for(p) for p in hard]


def curate_twice_hard(problems: Sequence[Problem], folds: int, probe_config: CurationPlan | None = None, *,
                      seed: int = 0, init: PolicyParams | None = None,
                      count_passes: PassCounter | None = None) -> list[SupervisedExample]:
    """The whole corpus once, arena-identified hard problems at weight 2."""
    plan = _plan_with(probe_config, "twice_hard", folds)
    _, hard, _ = _arena(problems, plan, seed, init, count_passes)
    hard_ids = {p.id for p in hard}
    return [example_for(p, 2.0 if p.id in hard_ids else 1.0) for p in problems]


def _plan_with(plan: CurationPlan | None, strategy: str, folds: int) -> CurationPlan:
    base = plan or CurationPlan()
    return CurationPlan(**{**base.__dict__, "strategy": strategy, "folds": folds})


def curate(problems: Sequence[Problem], plan: CurationPlan, *, seed: int,
           count_passes: PassCounter | None = None) -> tuple[list[SupervisedExample], list[CurationRecord]]:
    """Apply ``plan.strategy``; also return the per-problem curation report."""
    if plan.strategy == "basic":
        examples = curate_basic(problems)
        return examples, [CurationRecord(p.id, 0, None, True, 1.0) for p in problems]
    kept, hard, records = _arena(problems, plan, seed, None, count_passes)
    hard_ids = {p.id for p in hard}
    if plan.strategy == "arena":
        keep_ids = {ex.problem_id for ex in kept} | hard_ids
        examples = [example_for(p) for p in problems if p.id in keep_ids]
        records = [CurationRecord(r.id, r.fold, r.probe_pass_count, r.retained, 1.0) for r in records]
    else:
        examples = [example_for(p, 2.0 if p.id in hard_ids else 1.0) for p in problems]
        records = [CurationRecord(r.id, r.fold, r.probe_pass_count, r.retained,
                                  2.0 if r.id in hard_ids else 1.0) for r in records]
    return examples, records


def warm_start(problems: Sequence[Problem], plan: CurationPlan, *, seed: int,
               init: PolicyParams | None = None) -> tuple[PolicyParams, list[SupervisedExample], list[CurationRecord]]:
    """Curate, then train a fresh policy on the curated examples."""
    examples, records = curate(problems, plan, seed=seed)
    params = train_supervised(init if init is not None else PolicyParams.zeros(), examples,
                              epochs=plan.epochs, learning_rate=plan.learning_rate,
                              batch_size=plan.batch_size, seed=seed, purpose="warmstart")
    return params, examples, records
