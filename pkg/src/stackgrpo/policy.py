"""Fixed-window linear-softmax policy over DSL tokens.

At step t the logits are::

    z = bias + features @ problem_weights + sum_j context_weights[j * (V + 1) + c_j]

where ``c_j`` is the token emitted j + 1 steps earlier (j = 0 is the most
recent) and ``BOS`` pads positions before the start.  Log-probabilities,
ratios and gradients always use the untempered distribution softmax(z);
temperature only changes what gets sampled.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .corpus import Problem, TestCase
from .lang import BOS, EOS, V, Program

W_CTX = 4
N_FEATURES = 64
LN_V = float(np.log(V))


@dataclass(frozen=True)
class PolicyParams:
    context_weights: np.ndarray  # [(V + 1) * W_CTX, V]
    problem_weights: np.ndarray  # [F, V]
    bias: np.ndarray  # [V]
    version: int = 0

    @classmethod
    def zeros(cls, n_features: int = N_FEATURES, w_ctx: int = W_CTX) -> "PolicyParams":
        return cls(np.zeros(((V + 1) * w_ctx, V)), np.zeros((n_features, V)), np.zeros(V), 0)

    @property
    def w_ctx(self) -> int:
        return self.context_weights.shape[0] // (V + 1)

    @property
    def n_features(self) -> int:
        return self.problem_weights.shape[0]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.context_weights, self.problem_weights, self.bias

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray, version: int | None = None) -> "PolicyParams":
        vec = np.asarray(vec, dtype=np.float64)
        out = []
        i = 0
        for a in self.arrays():
            out.append(vec[i:i + a.size].reshape(a.shape).copy())
            i += a.size
        if i != vec.size:
            raise ValueError("flat vector has the wrong size")
        return PolicyParams(*out, version=self.version if version is None else version)

    def frozen(self) -> "PolicyParams":
        """Copy whose arrays refuse in-place writes (reference policy)."""
        arrs = []
        for a in self.arrays():
            b = a.copy()
            b.flags.writeable = False
            arrs.append(b)
        return PolicyParams(*arrs, version=self.version)

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


@dataclass(frozen=True)
class PolicyGrad:
    context_weights: np.ndarray
    problem_weights: np.ndarray
    bias: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.context_weights.ravel(), self.problem_weights.ravel(), self.bias.ravel()])

    def __add__(self, other: "PolicyGrad") -> "PolicyGrad":
        return PolicyGrad(self.context_weights + other.context_weights,
                          self.problem_weights + other.problem_weights,
                          self.bias + other.bias)

    def scale(self, c: float) -> "PolicyGrad":
        return PolicyGrad(self.context_weights * c, self.problem_weights * c, self.bias * c)

    @classmethod
    def zeros_like(cls, params: PolicyParams) -> "PolicyGrad":
        return cls(*(np.zeros_like(a) for a in params.arrays()))


@dataclass(frozen=True)
class SampledSequence:
    program: Program
    logprobs: tuple[float, ...]
    step_entropies: tuple[float, ...]


# ---------------------------------------------------------------------------
# features

def _bucket(tag: str, n_buckets: int) -> int:
    return 2 + zlib.crc32(tag.encode()) % n_buckets


def _relation_tags(cases: tuple[TestCase, ...]) -> list[str]:
    """Output slots that copy, negate or ignore the inputs on every public case."""
    if not cases or len({(len(c.inputs), len(c.expected_outputs)) for c in cases}) != 1:
        return []
    n_in, n_out = len(cases[0].inputs), len(cases[0].expected_outputs)
    tags = []
    for k in range(n_out):
        outs = [c.expected_outputs[k] for c in cases]
        if len(set(outs)) == 1:
            tags.append(f"const:{k}:{outs[0]}")
        for i in range(n_in):
            ins = [c.inputs[i] for c in cases]
            if outs == ins:
                tags.append(f"eq:{k}:{i}")
            elif outs == [-x for x in ins]:
                tags.append(f"neg:{k}:{i}")
    return tags


@lru_cache(maxsize=4096)
def _features(public_cases: tuple[TestCase, ...], n_features: int) -> np.ndarray:
    f = np.zeros(n_features)
    f[0] = 1.0
    f[1] = min(len(public_cases), 8) / 8
    n_buckets = n_features - 2
    tags = []
    relations = _relation_tags(public_cases)
    for c in public_cases:
        tags.append(f"arity:{len(c.inputs)}")
        tags.append(f"nout:{len(c.expected_outputs)}")
        tags += [f"in:{k}:{v}" for k, v in enumerate(c.inputs)]
        tags += [f"out:{k}:{v}" for k, v in enumerate(c.expected_outputs)]
        tags += relations
    for t in tags:
        f[_bucket(t, n_buckets)] += 1.0
    if tags:
        f[2:] /= len(tags)
    f.flags.writeable = False
    return f


def problem_features(problem: Problem, n_features: int = N_FEATURES) -> np.ndarray:
    """Features from the public cases only.

    Component 0 is the constant 1, component 1 the public case count / 8
    (capped at 1), and the remaining components are crc32-hashed bucket counts
    of the tags ``arity:a``, ``nout:m``, ``in:k:v`` and ``out:k:v`` per case,
    plus the problem-level relation tags ``const:k:v``, ``eq:k:i`` and
    ``neg:k:i`` repeated once per case, all divided by the number of tags.
    The Euclidean norm is therefore at most sqrt(3).
    """
    return _features(problem.public_cases, n_features)


# ---------------------------------------------------------------------------
# step machinery

def _softmax_parts(z: np.ndarray):
    """Return (log_softmax, softmax) along the last axis."""
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    lse = np.log(np.exp(s).sum(axis=-1, keepdims=True))
    logp = s - lse
    return logp, np.exp(logp)


def entropy_of(logp: np.ndarray, p: np.ndarray) -> np.ndarray:
    return np.maximum(-(p * logp).sum(axis=-1), 0.0)


def context_rows(tokens: Sequence[int], w_ctx: int = W_CTX) -> np.ndarray:
    """Row indices into context_weights for every step of ``tokens``: [L, w_ctx]."""
    padded = [BOS] * w_ctx + list(tokens)
    n = len(tokens)
    rows = np.empty((n, w_ctx), dtype=np.int64)
    for t in range(n):
        for j in range(w_ctx):
            rows[t, j] = j * (V + 1) + padded[w_ctx + t - 1 - j]
    return rows


def base_logits(params: PolicyParams, features: np.ndarray) -> np.ndarray:
    return params.bias + features @ params.problem_weights


def logits(params: PolicyParams, features: np.ndarray, context: Sequence[int]) -> np.ndarray:
    """Logits for the next token given the tokens emitted so far (only the last W_CTX matter)."""
    w = params.w_ctx
    ctx = list(context)[-w:] if w else []
    padded = [BOS] * (w - len(ctx)) + ctx
    rows = np.array([j * (V + 1) + padded[w - 1 - j] for j in range(w)], dtype=np.int64)
    return base_logits(params, features) + params.context_weights[rows].sum(axis=0)


class StepBatch:
    """All steps of a list of programs flattened into arrays."""

    def __init__(self, programs: Sequence[Program], w_ctx: int = W_CTX):
        self.n_seq = len(programs)
        rows, targets, seq = [], [], []
        for i, prog in enumerate(programs):
            if len(prog):
                rows.append(context_rows(prog.tokens, w_ctx))
                targets.extend(prog.tokens)
                seq.extend([i] * len(prog))
        self.rows = np.concatenate(rows) if rows else np.zeros((0, w_ctx), dtype=np.int64)
        self.targets = np.asarray(targets, dtype=np.int64)
        self.seq = np.asarray(seq, dtype=np.int64)
        self.lengths = np.bincount(self.seq, minlength=self.n_seq) if self.n_seq else np.zeros(0, dtype=np.int64)

    @property
    def n_steps(self) -> int:
        return len(self.targets)

    def logits(self, params: PolicyParams, features: np.ndarray) -> np.ndarray:
        return base_logits(params, features) + params.context_weights[self.rows].sum(axis=1)

    def forward(self, params: PolicyParams, features: np.ndarray):
        """Return (log_softmax [N, V], softmax [N, V])."""
        return _softmax_parts(self.logits(params, features))

    def token_logprobs(self, logp: np.ndarray) -> np.ndarray:
        return logp[np.arange(self.n_steps), self.targets]

    def seq_sum(self, per_step: np.ndarray) -> np.ndarray:
        return np.bincount(self.seq, weights=per_step, minlength=self.n_seq)

    def backward(self, dz: np.ndarray, features: np.ndarray, params: PolicyParams) -> PolicyGrad:
        """Pull a per-step logit gradient [N, V] back to the parameters."""
        g_bias = dz.sum(axis=0) if len(dz) else np.zeros(V)
        g_prob = np.outer(features, g_bias)
        g_ctx = np.zeros_like(params.context_weights)
        for j in range(self.rows.shape[1]):
            np.add.at(g_ctx, self.rows[:, j], dz)
        return PolicyGrad(g_ctx, g_prob, g_bias)

    def onehot_minus_p(self, p: np.ndarray) -> np.ndarray:
        d = -p
        d[np.arange(self.n_steps), self.targets] += 1.0
        return d


def sequence_logprobs(params: PolicyParams, features: np.ndarray, programs: Sequence[Program]) -> np.ndarray:
    batch = StepBatch(programs, params.w_ctx)
    logp, _ = batch.forward(params, features)
    return batch.seq_sum(batch.token_logprobs(logp))


def sequence_logprob(params: PolicyParams, features: np.ndarray, program: Program) -> float:
    return float(sequence_logprobs(params, features, [program])[0])


def grad_sequence_logprob(params: PolicyParams, features: np.ndarray, program: Program) -> PolicyGrad:
    batch = StepBatch([program], params.w_ctx)
    _, p = batch.forward(params, features)
    return batch.backward(batch.onehot_minus_p(p), features, params)


# ---------------------------------------------------------------------------
# sampling

def sample_batch(params: PolicyParams, features: np.ndarray, temperature: float, t_max: int,
                 uniforms: np.ndarray) -> list[SampledSequence]:
    """Sample one sequence per row of ``uniforms`` ([G, >= t_max]) by inverse CDF.

    Row g alone determines sequence g, so results do not depend on how many
    sequences are sampled together.
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    g = uniforms.shape[0]
    w = params.w_ctx
    base = base_logits(params, features)
    offsets = np.arange(w) * (V + 1)
    ctx = np.full((g, w), BOS, dtype=np.int64)
    alive = np.ones(g, dtype=bool)
    toks = [[] for _ in range(g)]
    lps = [[] for _ in range(g)]
    ents = [[] for _ in range(g)]
    for t in range(t_max):
        idx = np.flatnonzero(alive)
        if not len(idx):
            break
        z = base + params.context_weights[ctx[idx] + offsets].sum(axis=1)
        logp, _ = _softmax_parts(z)
        if temperature == 1.0:
            logp_t = logp
        else:
            logp_t, _ = _softmax_parts(z / temperature)
        p_t = np.exp(logp_t)
        cdf = np.cumsum(p_t, axis=1)
        chosen = np.minimum((cdf < uniforms[idx, t, None]).sum(axis=1), V - 1)
        ent = entropy_of(logp_t, p_t)
        for k, i in enumerate(idx):
            tok = int(chosen[k])
            toks[i].append(tok)
            lps[i].append(float(logp[k, tok]))
            ents[i].append(float(ent[k]))
            if tok == EOS:
                alive[i] = False
        ctx[idx, 1:] = ctx[idx, :-1]
        ctx[idx, 0] = chosen
    return [SampledSequence(Program.from_tokens(toks[i]), tuple(lps[i]), tuple(ents[i])) for i in range(g)]


def sample(params: PolicyParams, features: np.ndarray, temperature: float, t_max: int,
           rng_stream: np.random.Generator) -> SampledSequence:
    return sample_batch(params, features, temperature, t_max, rng_stream.random((1, t_max)))[0]


def greedy(params: PolicyParams, features: np.ndarray, t_max: int) -> Program:
    """Argmax decoding; ties go to the lowest token id."""
    tokens: list[int] = []
    for _ in range(t_max):
        tok = int(np.argmax(logits(params, features, tokens)))
        tokens.append(tok)
        if tok == EOS:
            break
    return Program.from_tokens(tokens)


def mean_policy_entropy(params: PolicyParams, problems: Sequence[Problem], temperature: float = 1.0,
                        rollouts: int = 8, t_max: int = 16, seed: int = 0) -> float:
    """Mean exact step entropy over ``rollouts`` sampled sequences per problem."""
    if not problems:
        raise ValueError("need at least one problem")
    total = 0.0
    count = 0
    for p in problems:
        u = rngmod.stream(seed, "entropy", p.id).random((rollouts, t_max))
        for s in sample_batch(params, problem_features(p, params.n_features), temperature, t_max, u):
            total += sum(s.step_entropies)
            count += len(s.step_entropies)
    return total / count


def kl_per_step(logp: np.ndarray, p: np.ndarray, logq: np.ndarray) -> np.ndarray:
    """Exact categorical KL(p || q) at each step (rows)."""
    return np.maximum((p * (logp - logq)).sum(axis=-1), 0.0)


def bump(params: PolicyParams, **arrays) -> PolicyParams:
    """New params with some arrays replaced and the version advanced."""
    return replace(params, version=params.version + 1, **arrays)
