"""Stack-machine DSL: vocabulary, text format and a checked interpreter.

Token ids (part of the checkpoint compatibility contract, never reorder)::

    0-9   PUSH_0 .. PUSH_9     push the digit
    10    ADD                  pop b, pop a, push a + b
    11    SUB                  pop b, pop a, push a - b
    12    MUL                  pop b, pop a, push a * b
    13    DIV                  pop b, pop a, push a / b   (truncates toward zero)
    14    MOD                  pop b, pop a, push a % b   (sign of a, a == (a/b)*b + a%b)
    15    NEG                  pop a, push -a
    16    DUP                  pop a, push a, push a
    17    SWAP                 pop b, pop a, push b, push a
    18    DROP                 pop a
    19    IN                   push next unread input, or 0 once inputs are exhausted
    20    OUT                  pop a, append a to outputs
    21    EOS                  halt with status OK

``a`` is the second-popped and ``b`` the first-popped operand, so
``IN IN SUB`` on inputs ``[5, 2]`` leaves ``3``.  All arithmetic is checked
against the signed 64-bit range; a result outside it stops execution with
``Status.OVERFLOW``.  A zero divisor for DIV or MOD gives
``Status.DIV_BY_ZERO``; popping an empty stack gives ``Status.STACK_UNDERFLOW``.
Every executed token, EOS included, costs one step.  A program without EOS is
truncated: its tokens run and, if nothing failed earlier, the status is
``Status.TRUNCATED``.

The policy also uses a context-only padding id ``BOS = 22`` that is never
emitted and never appears in a Program.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

MNEMONICS: tuple[str, ...] = (
    *(f"PUSH_{d}" for d in range(10)),
    "ADD", "SUB", "MUL", "DIV", "MOD", "NEG",
    "DUP", "SWAP", "DROP", "IN", "OUT", "EOS",
)
V = len(MNEMONICS)
TOKEN_IDS: dict[str, int] = {m: i for i, m in enumerate(MNEMONICS)}

ADD, SUB, MUL, DIV, MOD, NEG = range(10, 16)
DUP, SWAP, DROP, IN, OUT, EOS = range(16, 22)
BOS = V

T_MAX_DEFAULT = 24
STEP_LIMIT_DEFAULT = 256

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1


@dataclass(frozen=True)
class Token:
    id: int
    mnemonic: str


class Status(enum.Enum):
    OK = "Ok"
    STACK_UNDERFLOW = "StackUnderflow"
    DIV_BY_ZERO = "DivByZero"
    STEP_LIMIT = "StepLimit"
    OVERFLOW = "Overflow"
    TRUNCATED = "Truncated"


class LangError(ValueError):
    pass


class UnknownMnemonic(LangError):
    def __init__(self, name: str, position: int):
        super().__init__(f"unknown mnemonic {name!r} at position {position}")
        self.name = name
        self.position = position


class LengthExceeded(LangError):
    pass


class MalformedProgram(LangError):
    pass


def vocabulary() -> list[Token]:
    """Return the fixed 22-token vocabulary in id order (EOS last)."""
    return [Token(i, m) for i, m in enumerate(MNEMONICS)]


@dataclass(frozen=True)
class Program:
    tokens: tuple[int, ...]
    truncated: bool

    def __post_init__(self):
        toks = self.tokens
        if any(not 0 <= t < V for t in toks):
            raise MalformedProgram(f"token id out of range in {toks}")
        n_eos = toks.count(EOS)
        if self.truncated:
            if n_eos:
                raise MalformedProgram("truncated program must not contain EOS")
        elif n_eos != 1 or toks[-1] != EOS:
            raise MalformedProgram("complete program must end with its only EOS")

    @classmethod
    def from_tokens(cls, tokens: Sequence[int]) -> "Program":
        tokens = tuple(int(t) for t in tokens)
        return cls(tokens, truncated=EOS not in tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def render(self) -> str:
        return render(self)


def render(program: Program) -> str:
    return " ".join(MNEMONICS[t] for t in program.tokens)


def parse_text(source: str, t_max: int = T_MAX_DEFAULT) -> Program:
    names = source.split()
    if len(names) > t_max:
        raise LengthExceeded(f"{len(names)} tokens exceed T_max={t_max}")
    tokens = []
    for pos, name in enumerate(names):
        try:
            tokens.append(TOKEN_IDS[name])
        except KeyError:
            raise UnknownMnemonic(name, pos) from None
    if EOS in tokens and tokens.index(EOS) != len(tokens) - 1:
        raise MalformedProgram(f"tokens after EOS at position {tokens.index(EOS)}")
    return Program.from_tokens(tokens)


@dataclass(frozen=True)
class ExecOutcome:
    status: Status
    outputs: tuple[int, ...]
    steps_used: int

    @property
    def ok(self) -> bool:
        return self.status is Status.OK


def _checked(value: int) -> int | None:
    return value if INT64_MIN <= value <= INT64_MAX else None


def trunc_div(a: int, b: int) -> int:
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def trunc_mod(a: int, b: int) -> int:
    return a - b * trunc_div(a, b)


def apply_binary(op: int, a: int, b: int) -> int | None:
    """Apply a binary op to (second-popped a, first-popped b).

    Returns None on overflow; callers check the zero divisor first.
    """
    if op == ADD:
        return _checked(a + b)
    if op == SUB:
        return _checked(a - b)
    if op == MUL:
        return _checked(a * b)
    if op == DIV:
        return _checked(trunc_div(a, b))
    return _checked(trunc_mod(a, b))


def execute(program: Program, inputs: Sequence[int], step_limit: int = STEP_LIMIT_DEFAULT) -> ExecOutcome:
    if step_limit < 1:
        raise ValueError("step_limit must be >= 1")
    return _execute(program.tokens, tuple(int(x) for x in inputs), step_limit)


@lru_cache(maxsize=1 << 18)
def _execute(tokens: tuple[int, ...], inputs: tuple[int, ...], step_limit: int) -> ExecOutcome:
    stack: list[int] = []
    outputs: list[int] = []
    next_in = 0
    steps = 0

    def stop(status: Status) -> ExecOutcome:
        return ExecOutcome(status, tuple(outputs), steps)

    for tok in tokens:
        if steps >= step_limit:
            return stop(Status.STEP_LIMIT)
        steps += 1
        if tok < 10:
            stack.append(tok)
        elif tok <= MOD:
            if len(stack) < 2:
                return stop(Status.STACK_UNDERFLOW)
            b = stack.pop()
            a = stack.pop()
            if tok >= DIV and b == 0:
                return stop(Status.DIV_BY_ZERO)
            r = apply_binary(tok, a, b)
            if r is None:
                return stop(Status.OVERFLOW)
            stack.append(r)
        elif tok == IN:
            stack.append(inputs[next_in] if next_in < len(inputs) else 0)
            next_in += 1
        elif tok == EOS:
            return stop(Status.OK)
        else:
            if not stack or (tok == SWAP and len(stack) < 2):
                return stop(Status.STACK_UNDERFLOW)
            if tok == NEG:
                r = _checked(-stack[-1])
                if r is None:
                    return stop(Status.OVERFLOW)
                stack[-1] = r
            elif tok == DUP:
                stack.append(stack[-1])
            elif tok == SWAP:
                stack[-1], stack[-2] = stack[-2], stack[-1]
            elif tok == DROP:
                stack.pop()
            else:  # OUT
                outputs.append(stack.pop())
    # only reachable for programs that never hit EOS
    return stop(Status.TRUNCATED)
