"""Run configuration: one INI-style file, strict keys, canonical dump.

Sections and keys mirror the dataclasses they fill::

    [run]        seed, workers, out_dir
    [corpus]     CorpusConfig fields
    [split]      SplitConfig fields
    [warmstart]  CurationPlan fields
    [stage1]     StageConfig fields (stage is fixed by the section)
    [stage2]     StageConfig fields; phases = "15:64, 10:32, 5:32" or empty for scaled
    [grpo]       GrpoConfig fields (group_size, t_max, temperature are set per stage)
    [eval]       EvalConfig fields
    [ablate]     AblateConfig fields

Sequences are comma separated.  Booleans accept true/false.  A key absent
from the file keeps its default; a key the section does not define is an
error naming the key and its line.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import CorpusConfig
from .curriculum import Phase, PipelineConfig, SplitConfig, StageConfig, stage_one_defaults, stage_two_defaults
from .grpo import GrpoConfig
from .warmstart import CurationPlan


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    workers: int = 1
    out_dir: str = "runs/default"


@dataclass(frozen=True)
class EvalConfig:
    n_samples: int = 32
    temperature: float = 1.0
    ks: tuple[int, ...] = (1, 10)
    t_max: int = 24
    greedy: bool = False


@dataclass(frozen=True)
class AblateConfig:
    budgets: tuple[int, ...] = (8, 32, 64)
    steps: int = 48
    t_max: int = 16
    eval_rollouts: int = 32
    threshold: float = 0.5
    probe_count: int = 6  # held-out easy problems tracked for side effects


def default_corpus() -> CorpusConfig:
    return CorpusConfig(easy=20, medium=20, hard=20)


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    corpus: CorpusConfig = field(default_factory=default_corpus)
    split: SplitConfig = field(default_factory=SplitConfig)
    warmstart: CurationPlan = field(default_factory=lambda: CurationPlan(epochs=20))
    stage1: StageConfig = field(default_factory=stage_one_defaults)
    stage2: StageConfig = field(default_factory=stage_two_defaults)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)

    @property
    def seed(self) -> int:
        return self.run.seed

    def pipeline(self, *, skip_stage1: bool = False, skip_stage2: bool = False,
                 strategy: str | None = None) -> PipelineConfig:
        plan = self.warmstart if strategy is None else dataclasses.replace(self.warmstart, strategy=strategy)
        return PipelineConfig(curation=plan, stage1=self.stage1, stage2=self.stage2, grpo=self.grpo,
                              skip_stage1=skip_stage1, skip_stage2=skip_stage2)

    def hash(self) -> str:
        return hashlib.sha256(dump(self).encode()).hexdigest()[:16]


SECTIONS = tuple(f.name for f in dataclasses.fields(RunConfig))
_FIXED = {("stage1", "stage"), ("stage2", "stage")}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return ""
    if isinstance(value, tuple):
        if value and isinstance(value[0], Phase):
            return ", ".join(f"{p.k}:{p.steps}" for p in value)
        return ", ".join(_format(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _convert(default, text: str, section: str, key: str):
    text = text.strip()
    try:
        if key == "phases":
            if not text:
                return None
            return tuple(Phase(int(k), int(s)) for k, s in (item.split(":") for item in text.split(",")))
        if key in ("kl_coef", "learning_rate") and section.startswith("stage"):
            return None if not text else float(text)
        if isinstance(default, bool):
            if text.lower() not in ("true", "false"):
                raise ValueError("expected true or false")
            return text.lower() == "true"
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            kind = type(default[0]) if default else int
            return tuple(kind(t) for t in items)
        return text
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {text!r} ({exc})") from None


def _line_of(lines: list[str], section: str, key: str) -> int:
    current = None
    for n, line in enumerate(lines, start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        elif current == section and s.split("=")[0].strip() == key:
            return n
    return 0


def loads(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    lines = text.splitlines()
    defaults = RunConfig()
    built = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}] (line {_line_of(lines, section, '') or '?'})")
    for section in SECTIONS:
        current = getattr(defaults, section)
        names = {f.name for f in dataclasses.fields(current)}
        updates = {}
        if parser.has_section(section):
            for key, raw in parser.items(section):
                if key not in names or (section, key) in _FIXED:
                    raise ConfigError(f"unknown key {key!r} in [{section}] at line {_line_of(lines, section, key)}")
                updates[key] = _convert(getattr(current, key), raw, section, key)
        try:
            built[section] = dataclasses.replace(current, **updates)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {exc}") from None
    return RunConfig(**built)


def load(path) -> RunConfig:
    return loads(Path(path).read_text())


def dump(config: RunConfig) -> str:
    """Canonical text: every section, every key, declaration order."""
    out = []
    for section in SECTIONS:
        value = getattr(config, section)
        out.append(f"[{section}]")
        for f in dataclasses.fields(value):
            if (section, f.name) not in _FIXED:
                out.append(f"{f.name} = {_format(getattr(value, f.name))}".rstrip())
        out.append("")
    return "\n".join(out)
