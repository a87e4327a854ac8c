"""Shared setup for the experiment scripts: config, corpus and the seed list."""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from stackgrpo.config import RunConfig, load
from stackgrpo.corpus import Corpus, generate_corpus, load_corpus


def parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", type=Path, help="run config (defaults are used when omitted)")
    p.add_argument("--corpus", type=Path, help="corpus JSONL (generated from the config when omitted)")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", type=Path, default=Path("runs"))
    return p


def setup(args) -> tuple[RunConfig, Corpus]:
    cfg = load(args.config) if args.config else RunConfig()
    corpus = load_corpus(args.corpus) if args.corpus else generate_corpus(cfg.corpus, cfg.seed)
    return cfg, corpus


def write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=_jsonable) + "\n")
    print(f"wrote {path}")


def _jsonable(x):
    if isinstance(x, float) and x == float("inf"):
        return None
    raise TypeError(f"cannot serialise {type(x).__name__}")
