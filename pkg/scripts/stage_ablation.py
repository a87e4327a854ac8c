"""Held-out avg@1 for warm start only, stage one only, stage two only and the full pipeline."""

from __future__ import annotations

import numpy as np

from _common import parser, setup, write_json
from stackgrpo.experiments import VARIANTS, stage_ablation


def main() -> None:
    p = parser(__doc__)
    p.add_argument("--eval-samples", type=int, default=64)
    args = p.parse_args()
    cfg, corpus = setup(args)
    scores = {v: [] for v in VARIANTS}
    docs = []
    for seed in args.seeds:
        res = stage_ablation(corpus.problems, cfg.pipeline(), seed=seed, split=cfg.split,
                             eval_samples=args.eval_samples, eval_t_max=cfg.eval.t_max, workers=args.workers)
        for v in VARIANTS:
            scores[v].append(res.heldout_avg1[v])
        retention = [{"phase": ev.phase, "retained": ev.retained} for ev in res.results["full"].retention]
        docs.append({"seed": seed, "heldout_avg1": res.heldout_avg1, "retention": retention})
        print(f"seed {seed}: " + ", ".join(f"{v}={res.heldout_avg1[v]:.3f}" for v in VARIANTS)
              + f"  retained sizes {[len(r['retained']) for r in retention]}")
    for v in VARIANTS:
        print(f"{v}: median held-out avg@1 {float(np.median(scores[v])):.3f}")
    write_json(args.out_dir / "stage_ablation" / "stage_ablation.json", docs)


if __name__ == "__main__":
    main()
