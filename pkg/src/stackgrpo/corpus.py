"""Problem generation, the exhaustive solution oracle and corpus files."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import operator
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

from . import lang, rng
from .lang import (
    ADD, DIV, DROP, DUP, EOS, IN, MNEMONICS, MOD, MUL, NEG, OUT, SUB, SWAP, V,
    Program, apply_binary, execute,
)

SCHEMA = "stackgrpo.corpus/1"
DIFFICULTIES = ("easy", "medium", "hard")


class CorpusError(ValueError):
    pass


class BudgetExceeded(CorpusError):
    pass


class GenerationStalled(RuntimeError):
    pass


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # not a pytest class

    inputs: tuple[int, ...]
    expected_outputs: tuple[int, ...]


@dataclass(frozen=True)
class Problem:
    id: str
    public_cases: tuple[TestCase, ...]
    hidden_cases: tuple[TestCase, ...]
    difficulty: str
    min_solution_len: int
    solution_density: float
    reference: Program
    replica: int = 0

    @property
    def cases(self) -> tuple[TestCase, ...]:
        return self.public_cases + self.hidden_cases


@dataclass(frozen=True)
class CorpusConfig:
    easy: int = 10
    medium: int = 10
    hard: int = 10
    n_public: int = 3
    n_hidden: int = 8
    input_low: int = -9
    input_high: int = 9
    max_inputs: int = 2
    oracle_max_len: int = 7
    easy_max_len: int = 4
    medium_max_len: int = 6
    dead_code_slack: int = 1
    max_attempts: int = 5000
    enumeration_ceiling: int = V**8

    def __post_init__(self):
        if not 3 <= self.easy_max_len < self.medium_max_len < self.oracle_max_len:
            raise CorpusError("need 3 <= easy_max_len < medium_max_len < oracle_max_len")
        if min(self.easy, self.medium, self.hard) < 0 or self.n_hidden < 3 or self.n_public < 0:
            raise CorpusError("bucket counts and n_public must be >= 0, n_hidden >= 3")
        if self.input_low > self.input_high or self.max_inputs < 0:
            raise CorpusError("bad input range")

    def counts(self) -> dict[str, int]:
        return {"easy": self.easy, "medium": self.medium, "hard": self.hard}

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Corpus:
    problems: list[Problem]
    seed: int
    config: CorpusConfig = field(default_factory=CorpusConfig)

    def by_id(self) -> dict[str, Problem]:
        return {p.id: p for p in self.problems}

    def __len__(self) -> int:
        return len(self.problems)


# ---------------------------------------------------------------------------
# oracle

class OracleResult(NamedTuple):
    min_solution_len: int | None
    solution_density: float
    solution: Program | None
    n_passing: int
    n_programs: int


# tie-break order for "lexicographically first": mnemonic text, not token id
_TEXT_RANK = {t: r for r, t in enumerate(sorted(range(V), key=lambda t: MNEMONICS[t]))}
_BY_RANK = {r: t for t, r in _TEXT_RANK.items()}


def count_programs(max_len: int) -> int:
    """Number of complete programs (EOS-terminated) of length 1..max_len."""
    return sum((V - 1) ** k for k in range(max_len))


def oracle_solve(cases: Sequence[TestCase], max_len: int, ceiling: int = V**8) -> OracleResult:
    """Exact search over every complete program of length <= max_len.

    Equivalent to executing all ``count_programs(max_len)`` programs on every
    case, but prefixes that have reached the same machine state (stack columns
    over all cases, inputs consumed, outputs emitted) are merged and counted
    together.  Stack slots deeper than the remaining token budget can ever
    reach are dropped from the state, and prefixes that fail (error, wrong
    output, not enough room left for the outstanding outputs) are discarded.
    Counting is integer-exact; ties are broken by mnemonic text order.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if V**max_len > ceiling:
        raise BudgetExceeded(f"V^{max_len} = {V**max_len} exceeds enumeration ceiling {ceiling}")
    n_programs = count_programs(max_len)
    if not cases:
        raise ValueError("oracle needs at least one case")
    n_exp = len(cases[0].expected_outputs)
    if any(len(c.expected_outputs) != n_exp for c in cases):
        # straight-line programs emit the same number of outputs on every case
        return OracleResult(None, 0.0, None, 0, n_programs)
    n_cases = len(cases)
    n_in = max(len(c.inputs) for c in cases)
    zero = (0,) * n_cases
    in_cols = [tuple(c.inputs[k] if k < len(c.inputs) else 0 for c in cases) for k in range(n_in)] + [zero]
    exp_cols = [tuple(c.expected_outputs[k] for c in cases) for k in range(n_exp)]

    # state -> [prefix count, lexicographically smallest prefix (as text ranks)]
    layer: dict = {(0, 0, ()): [1, ()]}
    n_passing = 0
    min_len = None
    first = None
    for depth in range(max_len):
        hits = [entry for (_, n_out, _), entry in layer.items() if n_out == n_exp]
        if hits:
            n_passing += sum(e[0] for e in hits)
            if min_len is None:
                min_len = depth + 1
                first = min(e[1] for e in hits)
        if depth + 1 == max_len:
            break
        room = max_len - 2 - depth  # non-EOS tokens still allowed after the next one
        track = min_len is None
        nxt: dict = {}
        for (n_read, n_out, stack), (count, prefix) in layer.items():
            missing = n_exp - n_out
            if missing == room + 1:
                candidates = _ONLY_OUT
            elif missing == 0:
                candidates = _NO_OUT
            else:
                candidates = _ALL
            for tok in candidates:
                new = _step(tok, n_read, n_out, stack, n_in, in_cols, exp_cols, n_exp)
                if new is None:
                    continue
                r2, o2, s2 = new
                if n_exp - o2 > room:
                    continue
                if len(s2) > room + 1:
                    s2 = s2[len(s2) - room - 1:]
                key = (r2, o2, s2)
                p2 = prefix + (_TEXT_RANK[tok],) if track else None
                entry = nxt.get(key)
                if entry is None:
                    nxt[key] = [count, p2]
                else:
                    entry[0] += count
                    if track and p2 < entry[1]:
                        entry[1] = p2
        layer = nxt
    if min_len is None:
        return OracleResult(None, 0.0, None, 0, n_programs)
    solution = Program(tuple(_BY_RANK[r] for r in first) + (EOS,), truncated=False)
    return OracleResult(min_len, n_passing / n_programs, solution, n_passing, n_programs)


_ALL = tuple(range(V - 1))
_NO_OUT = tuple(t for t in _ALL if t != OUT)
_ONLY_OUT = (OUT,)


def _step(tok, n_read, n_out, stack, n_in, in_cols, exp_cols, n_exp):
    """Apply one token to a column-wise machine state; None if the prefix is dead."""
    h = len(stack)
    if tok < 10:
        return n_read, n_out, stack + ((tok,) * len(in_cols[-1]),)
    if tok <= MOD:
        if h < 2:
            return None
        a, b = stack[-2], stack[-1]
        if tok >= DIV and 0 in b:
            return None
        if tok == ADD:
            col = tuple(map(operator.add, a, b))
        elif tok == SUB:
            col = tuple(map(operator.sub, a, b))
        elif tok == MUL:
            col = tuple(map(operator.mul, a, b))
        else:
            col = tuple(apply_binary(tok, x, y) for x, y in zip(a, b))
            if None in col:
                return None
            return n_read, n_out, stack[:-2] + (col,)
        if max(col) > lang.INT64_MAX or min(col) < lang.INT64_MIN:
            return None
        return n_read, n_out, stack[:-2] + (col,)
    if tok == IN:
        return min(n_read + 1, n_in), n_out, stack + (in_cols[n_read],)
    if h < 1 or (tok == SWAP and h < 2):
        return None
    if tok == NEG:
        col = tuple(-x for x in stack[-1])
        if any(x > lang.INT64_MAX for x in col):
            return None
        return n_read, n_out, stack[:-1] + (col,)
    if tok == DUP:
        return n_read, n_out, stack + (stack[-1],)
    if tok == SWAP:
        return n_read, n_out, stack[:-2] + (stack[-1], stack[-2])
    if tok == DROP:
        return n_read, n_out, stack[:-1]
    # OUT
    if n_out >= n_exp or stack[-1] != exp_cols[n_out]:
        return None
    return n_read, n_out + 1, stack[:-1]


def passes_all(program: Program, cases: Sequence[TestCase]) -> bool:
    for c in cases:
        out = execute(program, c.inputs)
        if not out.ok or out.outputs != c.expected_outputs:
            return False
    return True


# ---------------------------------------------------------------------------
# generation

def label_difficulty(min_solution_len: int, config: CorpusConfig) -> str:
    if min_solution_len <= config.easy_max_len:
        return "easy"
    if min_solution_len <= config.medium_max_len:
        return "medium"
    return "hard"


# sampling weights for reference-program tokens (non-EOS ids 0..20)
_REF_WEIGHTS = [0.25] * 10 + [1.0, 1.0, 1.0, 0.5, 0.5, 0.6, 1.0, 0.6, 0.3, 3.0, 1.2]


def _length_range(bucket: str, config: CorpusConfig) -> tuple[int, int]:
    if bucket == "easy":
        return 3, config.easy_max_len
    if bucket == "medium":
        return config.easy_max_len + 1, config.medium_max_len
    return config.medium_max_len + 1, config.oracle_max_len


def _sample_reference(gen, length: int, config: CorpusConfig) -> Program | None:
    """Sample a stack-valid body of ``length - 1`` tokens ending in OUT."""
    body: list[int] = []
    height = 0
    n_in = 0
    for pos in range(length - 1):
        if pos == length - 2:
            if height < 1:
                return None
            body.append(OUT)
            break
        allowed = []
        for tok, w in enumerate(_REF_WEIGHTS):
            if tok == IN and n_in >= config.max_inputs:
                continue
            need = 2 if (10 <= tok <= MOD or tok == SWAP) else 1 if tok in (NEG, DUP, DROP, OUT) else 0
            if height >= need:
                allowed.append((tok, w))
        toks, ws = zip(*allowed)
        total = sum(ws)
        tok = toks[int(gen.choice(len(toks), p=[w / total for w in ws]))]
        body.append(tok)
        if tok < 10 or tok in (IN, DUP):
            height += 1
        elif tok <= MOD or tok in (DROP, OUT):
            height -= 1
        n_in += tok == IN
    if n_in == 0:
        return None
    return Program(tuple(body) + (EOS,), truncated=False)


def _sample_cases(gen, program: Program, arity: int, config: CorpusConfig) -> list[TestCase] | None:
    need = config.n_public + config.n_hidden
    seen = set()
    cases = []
    for _ in range(need * 20):
        inputs = tuple(int(x) for x in gen.integers(config.input_low, config.input_high + 1, size=arity))
        if inputs in seen:
            continue
        seen.add(inputs)
        out = execute(program, inputs)
        if not out.ok:
            continue
        cases.append(TestCase(inputs, out.outputs))
        if len(cases) == need:
            return cases
    return None


def _dead_tokens(program: Program, cases: Sequence[TestCase]) -> int:
    body = program.tokens[:-1]
    dead = 0
    for i in range(len(body)):
        shorter = Program(body[:i] + body[i + 1:] + (EOS,), truncated=False)
        if passes_all(shorter, cases):
            dead += 1
    return dead


def generate_corpus(config: CorpusConfig, seed: int) -> Corpus:
    """Rejection-sample problems until every difficulty bucket is filled.

    Reference programs are drawn at the bucket's length range, test cases come
    from executing the reference on sampled inputs, and the label comes from
    the oracle's minimal solution length.  Constant-output references and
    references carrying more removable tokens than ``dead_code_slack`` are
    rejected.
    """
    if config.oracle_max_len > 8:
        raise BudgetExceeded("oracle_max_len must be <= 8")
    gen = rng.stream(seed, "corpus")
    wanted = config.counts()
    got = {d: 0 for d in DIFFICULTIES}
    problems: list[Problem] = []
    seen_cases = set()
    attempts = 0
    while any(got[d] < wanted[d] for d in DIFFICULTIES):
        attempts += 1
        if attempts > config.max_attempts:
            raise GenerationStalled(f"gave up after {config.max_attempts} attempts, have {got} of {wanted}")
        open_buckets = [d for d in DIFFICULTIES if got[d] < wanted[d]]
        bucket = open_buckets[int(gen.integers(len(open_buckets)))]
        lo, hi = _length_range(bucket, config)
        ref = _sample_reference(gen, int(gen.integers(lo, hi + 1)), config)
        if ref is None:
            continue
        cases = _sample_cases(gen, ref, ref.tokens.count(IN), config)
        if cases is None:
            continue
        if len({c.expected_outputs for c in cases}) == 1:
            continue
        if _dead_tokens(ref, cases) > config.dead_code_slack:
            continue
        key = tuple(cases)
        if key in seen_cases:
            continue
        result = oracle_solve(cases, config.oracle_max_len, config.enumeration_ceiling)
        if result.min_solution_len is None:
            continue
        label = label_difficulty(result.min_solution_len, config)
        if got[label] >= wanted[label]:
            continue
        got[label] += 1
        seen_cases.add(key)
        problems.append(Problem(
            id=f"p{len(problems):03d}",
            public_cases=tuple(cases[:config.n_public]),
            hidden_cases=tuple(cases[config.n_public:]),
            difficulty=label,
            min_solution_len=result.min_solution_len,
            solution_density=result.solution_density,
            reference=result.solution,
        ))
    return Corpus(problems, seed, config)


def duplicate_hard(problems: Sequence[Problem]) -> list[Problem]:
    out = []
    for p in problems:
        out.append(p)
        if p.difficulty == "hard":
            out.append(dataclasses.replace(p, replica=p.replica + 1))
    return out


# ---------------------------------------------------------------------------
# files

def _case_record(c: TestCase) -> dict:
    return {"inputs": list(c.inputs), "expected_outputs": list(c.expected_outputs)}


def problem_record(p: Problem) -> dict:
    return {
        "id": p.id,
        "difficulty": p.difficulty,
        "public_cases": [_case_record(c) for c in p.public_cases],
        "hidden_cases": [_case_record(c) for c in p.hidden_cases],
        "min_solution_len": p.min_solution_len,
        "solution_density": p.solution_density,
        "reference_program": p.reference.render(),
    }


def dumps(corpus: Corpus) -> str:
    header = {
        "schema": SCHEMA,
        "seed": corpus.seed,
        "config_hash": corpus.config.hash(),
        "config": corpus.config.to_dict(),
    }
    lines = [json.dumps(header, separators=(",", ":"))]
    lines += [json.dumps(problem_record(p), separators=(",", ":")) for p in corpus.problems]
    return "\n".join(lines) + "\n"


def loads(text: str) -> Corpus:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise CorpusError("empty corpus file")
    header = json.loads(lines[0])
    if header.get("schema") != SCHEMA:
        raise CorpusError(f"unsupported corpus schema {header.get('schema')!r}")
    config = CorpusConfig(**header["config"])
    problems = []
    for n, line in enumerate(lines[1:], start=2):
        rec = json.loads(line)

        def cases(key):
            return tuple(TestCase(tuple(c["inputs"]), tuple(c["expected_outputs"])) for c in rec[key])

        p = Problem(
            id=rec["id"],
            public_cases=cases("public_cases"),
            hidden_cases=cases("hidden_cases"),
            difficulty=rec["difficulty"],
            min_solution_len=rec["min_solution_len"],
            solution_density=rec["solution_density"],
            reference=lang.parse_text(rec["reference_program"]),
        )
        if not passes_all(p.reference, p.cases):
            raise CorpusError(f"line {n}: reference program of {p.id} fails its own cases")
        problems.append(p)
    if len({p.id for p in problems}) != len(problems):
        raise CorpusError("duplicate problem ids")
    return Corpus(problems, header["seed"], config)


def save_corpus(corpus: Corpus, path) -> None:
    Path(path).write_text(dumps(corpus))


def load_corpus(path) -> Corpus:
    return loads(Path(path).read_text())
