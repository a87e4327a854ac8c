"""Pass-rate gains per initial-difficulty bucket under uniform-pool GRPO.

Warm-starts on the whole corpus for each seed, trains on all problems at
G=8 for 32 steps, and reports the mean gain of the low, medium and high
buckets (split at initial pass rates 0.25 and 0.75).
"""

from __future__ import annotations

import numpy as np

from _common import parser, setup, write_json
from stackgrpo.experiments import cluster_dynamics
from stackgrpo.metrics import emit_report
from stackgrpo.warmstart import CurationPlan, warm_start


def main() -> None:
    p = parser(__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=32)
    p.add_argument("--group-size", type=int, default=8)
    args = p.parse_args()
    cfg, corpus = setup(args)
    gains = {"low": [], "medium": [], "high": []}
    docs = []
    for seed in args.seeds:
        init, _, _ = warm_start(corpus.problems, CurationPlan(epochs=cfg.warmstart.epochs), seed=seed)
        run = cluster_dynamics(init, corpus.problems, seed=seed, steps=args.steps, group_size=args.group_size,
                               workers=args.workers)
        row = {c.label: (len(c.problem_ids), c.gain) for c in run.clusters}
        for label in gains:
            gains[label].append(row[label][1])
        print(f"seed {seed}: " + ", ".join(f"{k} n={n} gain={g:+.3f}" for k, (n, g) in row.items()))
        docs.append({"seed": seed, "checkpoints": run.checkpoints,
                     "clusters": [{"label": c.label, "ids": c.problem_ids, "series": [float(v) for v in c.series]}
                                  for c in run.clusters]})
        if seed == args.seeds[0]:
            emit_report(args.out_dir / "cluster_dynamics", run.trace, clusters=run.clusters, formats=("svg",),
                        name=f"clusters_seed{seed}")
    for label, vals in gains.items():
        print(f"{label}: median gain {float(np.nanmedian(vals)):+.3f}")
    write_json(args.out_dir / "cluster_dynamics" / "cluster_dynamics.json", docs)


if __name__ == "__main__":
    main()
