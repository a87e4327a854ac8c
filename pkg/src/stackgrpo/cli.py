"""Command-line entry point: ``stackgrpo <command> --config run.cfg ...``.

Exit codes: 0 success, 2 configuration error, 3 training error, 4 I/O or
checkpoint error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import checkpoint as ckpt
from . import config as cfgmod
from .corpus import CorpusError, GenerationStalled, generate_corpus, load_corpus, save_corpus
from .curriculum import PoolTooSmall, run_pipeline, split_pools
from .experiments import rollout_ablation
from .grpo import NumericalOverflow, StepReport
from .metrics import ReportIOError, emit_report, evaluate, mean_avg_at_1, read_csv
from .warmstart import STRATEGIES, warm_start

EXIT_OK, EXIT_CONFIG, EXIT_TRAIN, EXIT_IO = 0, 2, 3, 4


class TrainingError(RuntimeError):
    pass


def _config(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, run=replace(cfg.run, seed=args.seed))
    return cfg


def _workers(args, cfg) -> int:
    return args.workers if getattr(args, "workers", None) else cfg.run.workers


def _out_dir(args, cfg) -> Path:
    return Path(getattr(args, "out_dir", None) or cfg.run.out_dir)


def _write_jsonl(path: Path, records) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def _curation_records(records) -> list[dict]:
    return [{"id": r.id, "fold": r.fold, "probe_pass_count": r.probe_pass_count, "retained": r.retained,
             "weight": r.weight} for r in records]


def cmd_gen(args) -> int:
    cfg = _config(args)
    corpus = generate_corpus(cfg.corpus, cfg.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, out)
    counts = {d: sum(p.difficulty == d for p in corpus.problems) for d in ("easy", "medium", "hard")}
    print(f"wrote {len(corpus)} problems to {out}: " + " ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


def _pools(cfg, corpus):
    pools = split_pools(corpus.problems, cfg.split, cfg.seed)
    by_id = corpus.by_id()
    return pools, by_id


def cmd_warmstart(args) -> int:
    cfg = _config(args)
    corpus = load_corpus(args.corpus)
    pools, by_id = _pools(cfg, corpus)
    plan = cfg.warmstart if args.strategy is None else replace(cfg.warmstart, strategy=args.strategy)
    params, examples, records = warm_start([by_id[i] for i in pools.training], plan, seed=cfg.seed)
    out = _out_dir(args, cfg)
    ckpt.save(out / "warmstart.ckpt", params, ckpt.Manifest("warmstart", 0, cfg.hash(), {"examples": len(examples)}),
              t_max=cfg.stage1.t_max)
    _write_jsonl(out / "curation.jsonl", _curation_records(records))
    print(f"warm start on {len(examples)} examples ({plan.strategy}) -> {out / 'warmstart.ckpt'}")
    return EXIT_OK


def _snapshot(trace) -> dict:
    if not trace:
        return {}
    last = trace[-1]
    return {"mean_reward": last.mean_reward, "mean_entropy": last.mean_entropy,
            "truncation_rate": last.truncation_rate}


def cmd_train(args) -> int:
    cfg = _config(args)
    corpus = load_corpus(args.corpus)
    pools, by_id = _pools(cfg, corpus)
    pipe = cfg.pipeline(skip_stage1=args.skip_stage1, skip_stage2=args.skip_stage2, strategy=args.strategy)
    try:
        result = run_pipeline([by_id[i] for i in pools.stage1], [by_id[i] for i in pools.stage2], pipe,
                              seed=cfg.seed, workers=_workers(args, cfg), checkpoint_every=args.checkpoint_every)
    except (NumericalOverflow, PoolTooSmall, ValueError) as exc:
        raise TrainingError(str(exc)) from exc
    out = _out_dir(args, cfg)
    h = cfg.hash()
    t_max = {"warmstart": cfg.stage1.t_max, "stage1": cfg.stage1.t_max, "stage2": cfg.stage2.t_max}
    for cp in result.checkpoints:
        trace = [t for t in result.trace if {"stage1": "one", "stage2": "two"}.get(cp.stage) == t.stage]
        ckpt.save(out / f"{cp.stage}.ckpt", cp.params, ckpt.Manifest(cp.stage, cp.step, h, _snapshot(trace)),
                  t_max=t_max[cp.stage])
    for cp in result.snapshots:
        ckpt.save(out / f"{cp.stage}_step{cp.step:05d}.ckpt", cp.params, ckpt.Manifest(cp.stage, cp.step, h, {}),
                  t_max=t_max[cp.stage])
    emit_report(out, result.trace, formats=("csv",), name="train")
    _write_jsonl(out / "retention.jsonl", [{"phase": e.phase, "retained": e.retained, "dropped": e.dropped}
                                           for e in result.retention])
    _write_jsonl(out / "curation.jsonl", _curation_records(result.curation))
    (out / "pools.json").write_text(json.dumps({"stage1": pools.stage1, "stage2": pools.stage2,
                                                "heldout": pools.heldout}, indent=1) + "\n")
    print(f"{len(result.checkpoints)} checkpoints, {len(result.trace)} trace rows -> {out}")
    return EXIT_OK


def _select(corpus, cfg, split: str):
    pools, by_id = _pools(cfg, corpus)
    ids = {"all": [p.id for p in corpus.problems], "heldout": pools.heldout, "stage1": pools.stage1,
           "stage2": pools.stage2, "training": pools.training}[split]
    return [by_id[i] for i in ids]


def cmd_eval(args) -> int:
    cfg = _config(args)
    params, manifest = ckpt.load(args.checkpoint, cfg.hash(), allow_config_mismatch=args.allow_config_mismatch)
    corpus = load_corpus(args.corpus)
    problems = _select(corpus, cfg, args.split)
    ks = tuple(args.k) if args.k else cfg.eval.ks
    n = max(cfg.eval.n_samples, max(ks))
    results = evaluate(params, problems, n, cfg.eval.temperature, seed=cfg.seed, ks=ks, t_max=cfg.eval.t_max,
                       use_greedy=cfg.eval.greedy or args.greedy, workers=_workers(args, cfg))
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    emit_report(out, eval_results=results, formats=("csv", "json"), name=f"eval_{manifest.stage or 'policy'}")
    summary = {f"pass@{k}": sum(r.pass_at_k[k] for r in results) / max(len(results), 1) for k in ks}
    summary["avg@1"] = mean_avg_at_1(results)
    print(json.dumps({"checkpoint": str(args.checkpoint), "split": args.split, "problems": len(results), **summary},
                     sort_keys=True))
    return EXIT_OK


def cmd_ablate_rollout(args) -> int:
    cfg = _config(args)
    params, _ = ckpt.load(args.checkpoint, cfg.hash(), allow_config_mismatch=args.allow_config_mismatch)
    corpus = load_corpus(args.corpus)
    by_id = corpus.by_id()
    missing = [t for t in args.target if t not in by_id]
    if missing:
        raise cfgmod.ConfigError(f"unknown target ids {missing}")
    budgets = tuple(args.budgets) if args.budgets else cfg.ablate.budgets
    pools, _ = _pools(cfg, corpus)
    probes = [by_id[i] for i in pools.heldout if by_id[i].difficulty == "easy"][:cfg.ablate.probe_count]
    runs = rollout_ablation(params, [by_id[t] for t in args.target], budgets, steps=args.steps or cfg.ablate.steps,
                            seed=cfg.seed, t_max=cfg.ablate.t_max, eval_rollouts=cfg.ablate.eval_rollouts,
                            threshold=cfg.ablate.threshold, probes=probes, grpo=cfg.grpo,
                            workers=_workers(args, cfg))
    out = _out_dir(args, cfg)
    doc = {"schema": "stackgrpo.ablate/1", "targets": list(args.target), "probes": [p.id for p in probes],
           "runs": [{"group_size": r.group_size, "series": r.series, "probe_before": r.probe_before,
                     "probe_after": r.probe_after, "steps_to_threshold": r.steps_to_threshold
                     if r.steps_to_threshold != float("inf") else None} for r in runs]}
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablate_rollout.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    emit_report(out, formats=("svg",), budgets={r.group_size: r.series for r in runs}, name="ablate_rollout")
    for r in runs:
        print(f"G={r.group_size}: steps to {cfg.ablate.threshold} = {r.steps_to_threshold}, "
              f"final {r.series[-1]:.3f}, probe shift {r.probe_shift:+.3f}")
    return EXIT_OK


def _trace_from_csv(path: Path) -> list[StepReport]:
    _, rows = read_csv(path)
    rates = {}
    side = path.with_name(path.name.replace("_trace.csv", "_pass_rates.csv"))
    if side.exists():
        _, prow = read_csv(side)
        rates = {r["step"]: {k: v for k, v in r.items() if k != "step" and v != ""} for r in prow}
    return [StepReport(step=r["step"], stage=str(r["stage"]), phase=r["phase"], pass_rates=rates.get(r["step"], {}),
                       mean_reward=float(r["mean_reward"]), mean_entropy=float(r["mean_entropy"]),
                       truncation_rate=float(r["truncation_rate"]), loss=float(r["loss"]), kl=float(r["kl"]))
            for r in rows]


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    trace = _trace_from_csv(run / "train_trace.csv")
    paths = emit_report(Path(args.out) if args.out else run, trace, formats=tuple(args.format), name="report")
    print("\n".join(paths))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stackgrpo", description="Two-stage GRPO on a stack-machine synthesis task.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, corpus=True):
        sp.add_argument("--config", help="run config file (defaults when omitted)")
        sp.add_argument("--seed", type=int, help="override [run] seed")
        sp.add_argument("--workers", type=int, help="override [run] workers")
        if corpus:
            sp.add_argument("--corpus", required=True)

    def ints(text):
        return [int(t) for t in text.split(",") if t.strip()]

    g = sub.add_parser("gen", help="generate a corpus")
    common(g, corpus=False)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    w = sub.add_parser("warmstart", help="curate and train the supervised warm start")
    common(w)
    w.add_argument("--strategy", choices=STRATEGIES)
    w.add_argument("--out-dir")
    w.set_defaults(func=cmd_warmstart)

    t = sub.add_parser("train", help="warm start, stage one, stage two")
    common(t)
    t.add_argument("--skip-stage1", action="store_true")
    t.add_argument("--skip-stage2", action="store_true")
    t.add_argument("--strategy", choices=STRATEGIES)
    t.add_argument("--checkpoint-every", type=int, default=0, metavar="N",
                   help="also checkpoint every N RL steps (default: after each stage only)")
    t.add_argument("--out-dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="pass@k and avg@1 of a checkpoint")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--k", type=ints, help="comma-separated k values")
    e.add_argument("--split", default="heldout", choices=("all", "heldout", "stage1", "stage2", "training"))
    e.add_argument("--greedy", action="store_true")
    e.add_argument("--allow-config-mismatch", action="store_true")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate-rollout", help="rollout-budget comparison on target problems")
    common(a)
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--target", required=True, type=lambda s: [x for x in s.split(",") if x])
    a.add_argument("--budgets", type=ints)
    a.add_argument("--steps", type=int)
    a.add_argument("--allow-config-mismatch", action="store_true")
    a.add_argument("--out-dir")
    a.set_defaults(func=cmd_ablate_rollout)

    r = sub.add_parser("report", help="charts and JSON from a train run directory")
    r.add_argument("--run-dir", required=True)
    r.add_argument("--format", nargs="+", default=["json", "svg"], choices=("csv", "json", "svg"))
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, NumericalOverflow, GenerationStalled, PoolTooSmall) as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except (ckpt.CheckpointError, CorpusError, ReportIOError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
