"""GRPO: group rollouts, group-relative advantages, clipped surrogate, updates."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import rng as rngmod
from .corpus import Problem
from .judge import MODES, Verdict, judge_batch
from .optim import AdamConfig, OptimizerState, adam_step
from .policy import (
    PolicyGrad, PolicyParams, SampledSequence, StepBatch, kl_per_step,
    problem_features, sample_batch,
)

AGGREGATIONS = ("sequence_mean", "token_mean")


class NumericalOverflow(RuntimeError):
    pass


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    t_max: int = 16
    temperature: float = 1.0
    clip_epsilon: float = 0.2
    kl_coef: float = 0.0
    std_floor: float = 1e-12  # only guards near-constant float rewards; ties are zeroed exactly
    learning_rate: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    updates_per_batch: int = 1
    token_aggregation: str = "sequence_mean"
    reward_mode: str = "binary"
    log_ratio_guard: float = 30.0

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if not 0 < self.clip_epsilon < 1:
            raise ValueError("clip_epsilon must be in (0, 1)")
        if self.std_floor <= 0:
            raise ValueError("std_floor must be > 0")
        if self.kl_coef < 0:
            raise ValueError("kl_coef must be >= 0")
        if self.token_aggregation not in AGGREGATIONS:
            raise ValueError(f"token_aggregation must be one of {AGGREGATIONS}")
        if self.reward_mode not in MODES:
            raise ValueError(f"reward_mode must be one of {MODES}")

    @property
    def adam(self) -> AdamConfig:
        return AdamConfig(self.learning_rate, self.beta1, self.beta2, self.adam_eps)


@dataclass
class RolloutGroup:
    problem: Problem
    rollouts: list[SampledSequence]
    verdicts: list[Verdict]
    rewards: np.ndarray
    old_logprobs: np.ndarray
    old_token_logprobs: np.ndarray
    advantages: np.ndarray = field(default=None)

    @property
    def problem_id(self) -> str:
        return self.problem.id

    @property
    def pass_rate(self) -> float:
        return float(np.mean([v.all_passed for v in self.verdicts]))


@dataclass(frozen=True)
class StepReport:
    step: int
    stage: str
    phase: int
    pass_rates: dict[str, float]
    mean_reward: float
    mean_entropy: float
    truncation_rate: float
    loss: float
    kl: float


class Surrogate(NamedTuple):
    loss: float
    grad: PolicyGrad
    kl: float
    clip_fraction: float


def group_advantages(rewards, std_floor: float = 1e-12) -> np.ndarray:
    """(r - mean) / (population std + std_floor); exactly zero when all rewards tie."""
    r = np.asarray(rewards, dtype=np.float64)
    if len(r) < 2:
        raise ValueError("a group needs at least two rewards")
    if np.all(r == r[0]):
        return np.zeros_like(r)
    return (r - r.mean()) / (r.std() + std_floor)


def collect_group(params: PolicyParams, problem: Problem, group_size: int, t_max: int,
                  rng: np.random.Generator, temperature: float = 1.0, mode: str = "binary") -> RolloutGroup:
    """Sample and judge ``group_size`` programs.

    Rollout g uses row g of one ``rng.random((group_size, t_max))`` draw, so a
    stream keyed by (seed, stage, step, problem) fixes every rollout.
    """
    if group_size < 2:
        raise ValueError("group_size must be >= 2")
    feats = problem_features(problem, params.n_features)
    rollouts = sample_batch(params, feats, temperature, t_max, rng.random((group_size, t_max)))
    programs = [s.program for s in rollouts]
    verdicts = judge_batch(programs, problem, mode)
    batch = StepBatch(programs, params.w_ctx)
    logp, _ = batch.forward(params, feats)
    tok_lp = batch.token_logprobs(logp)
    return RolloutGroup(
        problem=problem,
        rollouts=rollouts,
        verdicts=verdicts,
        rewards=np.array([v.reward for v in verdicts]),
        old_logprobs=batch.seq_sum(tok_lp),
        old_token_logprobs=tok_lp,
    )


def clipped_surrogate(params: PolicyParams, ref_params: PolicyParams | None, group: RolloutGroup,
                      config: GrpoConfig) -> Surrogate:
    """Loss = -aggregate(min(rho*A, clip(rho)*A)) + beta * KL(new || ref), with its exact gradient.

    ``sequence_mean`` uses one sequence-level ratio per rollout and averages
    over the group; ``token_mean`` uses per-token ratios and averages over all
    tokens in the group.  KL is the exact categorical KL at every sampled step,
    averaged over all steps.  Terms on the clipped branch carry no gradient.
    """
    if group.advantages is None:
        raise ValueError("compute group advantages first")
    feats = problem_features(group.problem, params.n_features)
    batch = StepBatch([s.program for s in group.rollouts], params.w_ctx)
    n_steps = batch.n_steps
    logp, p = batch.forward(params, feats)
    tok_lp = batch.token_logprobs(logp)
    eps = config.clip_epsilon
    adv = group.advantages

    if config.token_aggregation == "sequence_mean":
        log_ratio = batch.seq_sum(tok_lp) - group.old_logprobs
        a = adv
        denom = len(adv)
    else:
        log_ratio = tok_lp - group.old_token_logprobs
        a = adv[batch.seq]
        denom = max(n_steps, 1)
    if np.any(log_ratio > config.log_ratio_guard):
        raise NumericalOverflow(f"importance ratio above exp({config.log_ratio_guard}) on {group.problem_id}")
    rho = np.exp(log_ratio)
    unclipped = rho * a
    clipped = np.clip(rho, 1 - eps, 1 + eps) * a
    active = unclipped <= clipped
    terms = np.where(active, unclipped, clipped)
    loss = -terms.sum() / denom
    coef = -np.where(active, unclipped, 0.0) / denom  # d loss / d logprob
    step_coef = coef[batch.seq] if config.token_aggregation == "sequence_mean" else coef
    dz = step_coef[:, None] * batch.onehot_minus_p(p)

    kl = 0.0
    if ref_params is not None and n_steps:
        logq, _ = batch.forward(ref_params, feats)
        kl_t = kl_per_step(logp, p, logq)
        kl = float(kl_t.mean())
        if config.kl_coef > 0:
            loss += config.kl_coef * kl
            dz = dz + (config.kl_coef / n_steps) * p * (logp - logq - kl_t[:, None])
    frac = float(np.mean(~active & (rho != 1.0))) if len(rho) else 0.0
    return Surrogate(float(loss), batch.backward(dz, feats, params), kl, frac)


def collect_groups(params: PolicyParams, problems: Sequence[Problem], config: GrpoConfig, seed: int,
                   stage: str, step: int, workers: int = 1, purpose: str = "rollout") -> list[RolloutGroup]:
    def one(problem):
        gen = rngmod.stream(seed, purpose, stage, step, problem.id)
        return collect_group(params, problem, config.group_size, config.t_max, gen,
                             config.temperature, config.reward_mode)

    if workers <= 1 or len(problems) <= 1:
        return [one(p) for p in problems]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, problems))


def train_step(params: PolicyParams, opt_state: OptimizerState, problems: Sequence[Problem],
               config: GrpoConfig, *, seed: int, step: int, stage: str = "one", phase: int = 0,
               ref_params: PolicyParams | None = None, workers: int = 1):
    """One GRPO step: collect groups, then ``updates_per_batch`` optimizer updates.

    The update gradient is the sum of per-group surrogate gradients, reduced in
    problem order.  Returns (params, opt_state, StepReport, groups).
    """
    if not problems:
        raise ValueError("empty batch")
    groups = collect_groups(params, problems, config, seed, stage, step, workers)
    for g in groups:
        g.advantages = group_advantages(g.rewards, config.std_floor)
    first_loss = first_kl = 0.0
    for epoch in range(config.updates_per_batch):
        total = PolicyGrad.zeros_like(params)
        loss = kl = 0.0
        for g in groups:
            s = clipped_surrogate(params, ref_params, g, config)
            total = total + s.grad
            loss += s.loss
            kl += s.kl
        if epoch == 0:
            first_loss, first_kl = loss, kl / len(groups)
        params, opt_state = adam_step(params, opt_state, total, config.adam)
    if not params.all_finite():
        raise NumericalOverflow(f"non-finite parameters after step {step}")
    n_steps = sum(len(s.step_entropies) for g in groups for s in g.rollouts)
    report = StepReport(
        step=step,
        stage=stage,
        phase=phase,
        pass_rates={g.problem_id: g.pass_rate for g in groups},
        mean_reward=float(np.mean([g.rewards.mean() for g in groups])),
        mean_entropy=sum(sum(s.step_entropies) for g in groups for s in g.rollouts) / max(n_steps, 1),
        truncation_rate=float(np.mean([s.program.truncated for g in groups for s in g.rollouts])),
        loss=first_loss,
        kl=first_kl,
    )
    return params, opt_state, report, groups
