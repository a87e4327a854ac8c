"""Steps to reach a pass rate of 0.5 on one hard problem, for several rollout budgets.

Warm-starts on the training pools, picks the hard target the warm start
solves least often (but not never), then trains on it alone once per budget
and seed. Prints the per-budget seed-median and writes JSON plus an SVG of
the seed-0 learning curves.
"""

from __future__ import annotations

import math

import numpy as np

from _common import parser, setup, write_json
from stackgrpo.curriculum import split_pools
from stackgrpo.experiments import pick_ablation_target, rollout_ablation
from stackgrpo.metrics import emit_report
from stackgrpo.warmstart import CurationPlan, warm_start


def main() -> None:
    p = parser(__doc__.splitlines()[0])
    p.add_argument("--budgets", type=int, nargs="+")
    p.add_argument("--steps", type=int)
    args = p.parse_args()
    cfg, corpus = setup(args)
    ab = cfg.ablate
    budgets = tuple(args.budgets or ab.budgets)
    steps = args.steps or ab.steps
    by_id = corpus.by_id()
    pools = split_pools(corpus.problems, cfg.split, cfg.seed)
    training = [by_id[i] for i in pools.training]
    init, _, _ = warm_start(training, CurationPlan(epochs=cfg.warmstart.epochs), seed=cfg.seed)
    target = pick_ablation_target(init, training, seed=cfg.seed)
    probes = [by_id[i] for i in pools.heldout if by_id[i].difficulty == "easy"][:ab.probe_count]
    print(f"target {target.id}: {target.reference.render()} (density {target.solution_density:.2e})")

    per_seed = []
    for seed in args.seeds:
        runs = rollout_ablation(init, [target], budgets, steps=steps, seed=seed, t_max=ab.t_max,
                                eval_rollouts=ab.eval_rollouts, threshold=ab.threshold, probes=probes,
                                workers=args.workers)
        per_seed.append(runs)
        print(f"seed {seed}: " + ", ".join(f"G={r.group_size} -> {r.steps_to_threshold:g}" for r in runs))
    for i, g in enumerate(budgets):
        med = float(np.median([runs[i].steps_to_threshold for runs in per_seed]))
        shift = float(np.median([runs[i].probe_shift for runs in per_seed]))
        print(f"G={g}: median steps {med:g}, median probe shift {shift:+.3f}")

    out = args.out_dir / "rollout_ablation"
    write_json(out / "rollout_ablation.json", {
        "target": target.id, "budgets": list(budgets), "seeds": list(args.seeds), "threshold": ab.threshold,
        "runs": [[{"group_size": r.group_size, "series": r.series, "probe_shift": r.probe_shift,
                   "steps_to_threshold": None if math.isinf(r.steps_to_threshold) else r.steps_to_threshold}
                  for r in runs] for runs in per_seed],
    })
    emit_report(out, formats=("svg",), budgets={r.group_size: r.series for r in per_seed[0]}, name="curves")


if __name__ == "__main__":
    main()
