"""Two-stage RL schedule: entropy expansion, then the hard-focus curriculum."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import rng as rngmod
from .corpus import Problem
from .grpo import GrpoConfig, StepReport, collect_groups, train_step
from .optim import OptimizerState
from .policy import PolicyParams
from .warmstart import CurationPlan, warm_start

# hard-focus phase sizes out of a 175-problem pool, with their step budgets
REFERENCE_POOL = 175
REFERENCE_PHASES = ((72, 64), (50, 32), (25, 32))


class PoolTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class Phase:
    k: int
    steps: int


@dataclass(frozen=True)
class StageConfig:
    stage: str = "one"
    steps: int = 32
    group_size: int = 8
    t_max: int = 16
    batch_size: int = 0  # 0 = whole pool (stage one) / whole active set (stage two)
    temperature: float = 1.0
    phases: tuple[Phase, ...] | None = None  # stage two; None = scale REFERENCE_PHASES to the pool
    phase_steps: tuple[int, ...] = (64, 32, 32)
    refresh: str = "training"  # stage two pass-rate source: "training" or "probe"
    probe_rollouts: int = 0  # 0 = group_size
    kl_coef: float | None = None  # None = inherit from the shared GrpoConfig
    learning_rate: float | None = None

    def __post_init__(self):
        if self.stage not in ("one", "two"):
            raise ValueError("stage must be 'one' or 'two'")
        if self.stage == "one" and self.phases:
            raise ValueError("stage one has no phases")
        if self.refresh not in ("training", "probe"):
            raise ValueError("refresh must be 'training' or 'probe'")
        if self.phases:
            ks = [ph.k for ph in self.phases]
            if any(b >= a for a, b in zip(ks, ks[1:])):
                raise ValueError("phase sizes must strictly decrease")

    def grpo(self, base: GrpoConfig) -> GrpoConfig:
        overrides = {k: v for k, v in (("kl_coef", self.kl_coef), ("learning_rate", self.learning_rate))
                     if v is not None}
        return replace(base, group_size=self.group_size, t_max=self.t_max, temperature=self.temperature,
                       **overrides)


def stage_one_defaults() -> StageConfig:
    return StageConfig(stage="one", steps=32, group_size=8, t_max=16)


def stage_two_defaults() -> StageConfig:
    # the KL anchor keeps the shared context weights from drifting toward the few hard programs
    return StageConfig(stage="two", steps=0, group_size=64, t_max=24, kl_coef=2.0)


def scale_phases(pool_size: int, steps: Sequence[int] = (64, 32, 32)) -> tuple[Phase, ...]:
    """Scale the 72/50/25-of-175 phase sizes to ``pool_size`` (round half up)."""
    ks = [int(np.floor(pool_size * k / REFERENCE_POOL + 0.5)) for k, _ in REFERENCE_PHASES]
    if any(k < 1 for k in ks) or any(b >= a for a, b in zip(ks, ks[1:])):
        raise PoolTooSmall(f"pool of {pool_size} gives phase sizes {ks}")
    if len(steps) != len(ks):
        raise ValueError("need one step budget per phase")
    return tuple(Phase(k, s) for k, s in zip(ks, steps))


def rank_hardest(pass_rate: Mapping[str, float], k: int) -> list[str]:
    """The k ids with the lowest pass rate, ties broken by id (string order)."""
    if k > len(pass_rate):
        raise ValueError(f"k={k} exceeds {len(pass_rate)} problems")
    return [pid for pid, _ in sorted(pass_rate.items(), key=lambda kv: (kv[1], kv[0]))[:k]]


@dataclass
class RetentionEvent:
    phase: int
    retained: dict[str, float]
    dropped: dict[str, float]


@dataclass
class CurriculumState:
    active_set: list[str]
    pass_rate: dict[str, float]
    phase_index: int = 0
    steps_in_phase: int = 0
    history: list[RetentionEvent] = field(default_factory=list)


@dataclass
class StageResult:
    params: PolicyParams
    trace: list[StepReport]
    retention: list[RetentionEvent] = field(default_factory=list)
    initial_pass_rates: dict[str, float] = field(default_factory=dict)

    @property
    def last_step(self) -> int:
        return self.trace[-1].step if self.trace else -1


def _batch_for(pool: Sequence[Problem], batch_size: int, seed: int, stage: str, step: int) -> list[Problem]:
    if batch_size <= 0 or batch_size >= len(pool):
        return list(pool)
    order = rngmod.stream(seed, "batch", stage, step).permutation(len(pool))[:batch_size]
    return [pool[i] for i in sorted(order)]


def probe_pass_rates(params: PolicyParams, problems: Sequence[Problem], base: GrpoConfig, *, rollouts: int,
                     t_max: int, seed: int, tag: str, workers: int = 1) -> dict[str, float]:
    cfg = replace(base, group_size=rollouts, t_max=t_max)
    groups = collect_groups(params, problems, cfg, seed, "probe", 0, workers, purpose=f"probe-{tag}")
    return {g.problem_id: g.pass_rate for g in groups}


StepHook = Callable[[str, int, PolicyParams], None]


def run_stage1(params: PolicyParams, pool: Sequence[Problem], config: StageConfig, grpo: GrpoConfig, *,
               seed: int, start_step: int = 0, workers: int = 1, on_step: StepHook | None = None) -> StageResult:
    """Uniform-pool GRPO for ``config.steps`` steps."""
    if not pool:
        raise ValueError("empty stage-one pool")
    cfg = config.grpo(grpo)
    ref = params.frozen()
    opt = OptimizerState.for_params(params)
    trace = []
    for i in range(config.steps):
        step = start_step + i
        batch = _batch_for(pool, config.batch_size, seed, "one", step)
        params, opt, report, _ = train_step(params, opt, batch, cfg, seed=seed, step=step, stage="one",
                                            ref_params=ref, workers=workers)
        trace.append(report)
        if on_step is not None:
            on_step("stage1", step + 1, params)
    return StageResult(params, trace)


def run_stage2(params: PolicyParams, pool: Sequence[Problem], config: StageConfig, grpo: GrpoConfig, *,
               seed: int, start_step: int = 0, workers: int = 1, on_step: StepHook | None = None) -> StageResult:
    """Hard-focus curriculum over strictly shrinking active sets.

    Phase 1 ranks the whole pool by probe pass rate; each later phase ranks
    only the previous phase's active set.  With ``refresh="training"`` the pass
    rate of a problem is its rate in the latest step that trained on it; with
    ``refresh="probe"`` candidates are re-probed at every phase boundary.
    """
    phases = config.phases or scale_phases(len(pool), config.phase_steps)
    if phases[0].k > len(pool):
        raise PoolTooSmall(f"phase size {phases[0].k} exceeds pool of {len(pool)}")
    cfg = config.grpo(grpo)
    by_id = {p.id: p for p in pool}
    n_probe = config.probe_rollouts or config.group_size
    initial = probe_pass_rates(params, pool, cfg, rollouts=n_probe, t_max=config.t_max, seed=seed,
                               tag="stage2-0", workers=workers)
    state = CurriculumState(active_set=[p.id for p in pool], pass_rate=dict(initial))
    ref = params.frozen()
    opt = OptimizerState.for_params(params)
    trace: list[StepReport] = []
    step = start_step
    for index, phase in enumerate(phases):
        candidates = list(state.active_set)
        if index > 0 and config.refresh == "probe":
            fresh = probe_pass_rates(params, [by_id[c] for c in candidates], cfg, rollouts=n_probe,
                                     t_max=config.t_max, seed=seed, tag=f"stage2-{index}", workers=workers)
            state.pass_rate.update(fresh)
        rates = {c: state.pass_rate[c] for c in candidates}
        active = rank_hardest(rates, phase.k)
        keep = set(active)
        state.history.append(RetentionEvent(
            phase=index,
            retained={c: rates[c] for c in active},
            dropped={c: rates[c] for c in sorted(candidates, key=lambda c: (rates[c], c)) if c not in keep},
        ))
        state.active_set = active
        state.phase_index = index
        state.steps_in_phase = 0
        problems = [by_id[c] for c in active]
        for _ in range(phase.steps):
            batch = _batch_for(problems, config.batch_size, seed, "two", step)
            params, opt, report, _ = train_step(params, opt, batch, cfg, seed=seed, step=step, stage="two",
                                                phase=index, ref_params=ref, workers=workers)
            state.pass_rate.update(report.pass_rates)
            state.steps_in_phase += 1
            trace.append(report)
            step += 1
            if on_step is not None:
                on_step("stage2", step, params)
    return StageResult(params, trace, state.history, initial)


@dataclass(frozen=True)
class SplitConfig:
    heldout_fraction: float = 0.2
    stage2_fraction: float = 0.4

    def __post_init__(self):
        if self.heldout_fraction < 0 or self.stage2_fraction < 0 or self.heldout_fraction + self.stage2_fraction >= 1:
            raise ValueError("split fractions must be >= 0 and leave room for the stage-one pool")


@dataclass(frozen=True)
class Pools:
    stage1: tuple[str, ...]
    stage2: tuple[str, ...]
    heldout: tuple[str, ...]

    @property
    def training(self) -> tuple[str, ...]:
        return tuple(sorted(self.stage1 + self.stage2))


def split_pools(problems: Sequence[Problem], config: SplitConfig, seed: int) -> Pools:
    """Disjoint held-out / stage-two / stage-one pools, stratified by difficulty."""
    held, two, one = [], [], []
    for difficulty in ("easy", "medium", "hard"):
        ids = sorted(p.id for p in problems if p.difficulty == difficulty)
        order = [ids[i] for i in rngmod.stream(seed, "split", difficulty).permutation(len(ids))]
        n_held = int(np.floor(len(ids) * config.heldout_fraction + 0.5))
        n_two = int(np.floor(len(ids) * config.stage2_fraction + 0.5))
        held += order[:n_held]
        two += order[n_held:n_held + n_two]
        one += order[n_held + n_two:]
    return Pools(tuple(sorted(one)), tuple(sorted(two)), tuple(sorted(held)))


@dataclass(frozen=True)
class PipelineConfig:
    curation: CurationPlan = field(default_factory=CurationPlan)
    stage1: StageConfig = field(default_factory=stage_one_defaults)
    stage2: StageConfig = field(default_factory=stage_two_defaults)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    skip_warmstart: bool = False
    skip_stage1: bool = False
    skip_stage2: bool = False

    def __post_init__(self):
        if self.stage1.stage != "one" or self.stage2.stage != "two":
            raise ValueError("stage configs are in the wrong slots")


@dataclass(frozen=True)
class Checkpoint:
    stage: str
    step: int
    params: PolicyParams


@dataclass
class PipelineResult:
    params: PolicyParams
    checkpoints: list[Checkpoint]
    stage1: StageResult | None = None
    stage2: StageResult | None = None
    curation: list = field(default_factory=list)
    snapshots: list[Checkpoint] = field(default_factory=list)  # intermediate, from checkpoint_every

    @property
    def trace(self) -> list[StepReport]:
        return (self.stage1.trace if self.stage1 else []) + (self.stage2.trace if self.stage2 else [])

    @property
    def retention(self) -> list[RetentionEvent]:
        return self.stage2.retention if self.stage2 else []


def run_pipeline(stage1_pool: Sequence[Problem], stage2_pool: Sequence[Problem], config: PipelineConfig, *,
                 seed: int, init: PolicyParams | None = None, workers: int = 1,
                 checkpoint_every: int = 0) -> PipelineResult:
    """Warm start on both training pools, then stage one, then stage two.

    A checkpoint is taken after every stage that runs.  With ``init`` given
    the warm start is replaced by those parameters (and still checkpointed).
    ``checkpoint_every`` > 0 also snapshots the params every that many global
    steps inside the RL stages.
    """
    checkpoints = []
    snapshots: list[Checkpoint] = []

    def hook(stage: str, step: int, p: PolicyParams) -> None:
        if step % checkpoint_every == 0:
            snapshots.append(Checkpoint(stage, step, p))

    on_step = hook if checkpoint_every > 0 else None
    records = []
    if init is not None:
        params = init
    elif config.skip_warmstart:
        params = PolicyParams.zeros()
    else:
        train = sorted({p.id: p for p in list(stage1_pool) + list(stage2_pool)}.values(), key=lambda p: p.id)
        params, _, records = warm_start(train, config.curation, seed=seed)
    checkpoints.append(Checkpoint("warmstart", 0, params))
    step = 0
    s1 = s2 = None
    if not config.skip_stage1:
        s1 = run_stage1(params, stage1_pool, config.stage1, config.grpo, seed=seed, start_step=step,
                        workers=workers, on_step=on_step)
        params, step = s1.params, s1.last_step + 1
        checkpoints.append(Checkpoint("stage1", step, params))
    if not config.skip_stage2:
        s2 = run_stage2(params, stage2_pool, config.stage2, config.grpo, seed=seed, start_step=step,
                        workers=workers, on_step=on_step)
        params, step = s2.params, max(step, s2.last_step + 1)
        checkpoints.append(Checkpoint("stage2", step, params))
    return PipelineResult(params, checkpoints, s1, s2, records, snapshots)
