import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import INPUT_PAIRS, make_problem
from oracles import central_difference, direct_logits, softmax
from stackgrpo.lang import BOS, EOS, TOKEN_IDS, V, Program, parse_text
from stackgrpo.policy import (
    LN_V, PolicyParams, context_rows, entropy_of, grad_sequence_logprob, greedy, logits, mean_policy_entropy,
    problem_features, sample, sample_batch, sequence_logprob, sequence_logprobs,
)
from stackgrpo.rng import stream


def random_params(rng, n_features=8, scale=0.5):
    z = PolicyParams.zeros(n_features=n_features)
    return z.with_flat(rng.normal(0, scale, z.flat().size))


def random_program(rng, max_body=7):
    body = [int(t) for t in rng.integers(0, V - 1, rng.integers(0, max_body + 1))]
    if rng.random() < 0.8 or not body:
        body.append(EOS)
    return Program.from_tokens(body)


def test_frozen_constants():
    assert round(LN_V, 4) == 3.0910
    z = np.zeros(V)
    z[EOS] = 10
    assert softmax(z)[EOS] == pytest.approx(math.exp(10) / (math.exp(10) + 21))
    assert round(math.exp(10) / (math.exp(10) + 21), 5) == 0.99905
    assert round(5 * math.log(1 / 22), 3) == -15.455


def test_zero_params_give_zero_logits(toy_problems):
    p = PolicyParams.zeros()
    for prob in toy_problems:
        assert np.all(logits(p, problem_features(prob), [3, 4]) == 0)


def test_eos_bias_example():
    p = PolicyParams.zeros()
    p.bias[EOS] = 10
    probs = softmax(logits(p, np.zeros(p.n_features), []))
    assert probs[EOS] >= 0.999


def test_identical_public_cases_give_identical_logits():
    a = make_problem("IN IN ADD OUT EOS", INPUT_PAIRS, pid="a")
    b = make_problem("IN IN ADD OUT EOS", INPUT_PAIRS[:2] + INPUT_PAIRS[5:], pid="b", difficulty="hard")
    rng = np.random.default_rng(0)
    params = random_params(rng, n_features=64)
    assert np.array_equal(problem_features(a), problem_features(b))
    assert np.array_equal(logits(params, problem_features(a), [1]), logits(params, problem_features(b), [1]))


def test_features_layout(toy_problems):
    f = problem_features(toy_problems[0])
    assert f.shape == (64,)
    assert f[0] == 1.0 and f[1] == pytest.approx(2 / 8)
    assert np.array_equal(f, problem_features(toy_problems[0]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-9, 9), st.integers(-9, 9)), min_size=1, max_size=12),
       st.sampled_from(["IN IN ADD OUT EOS", "IN OUT EOS", "IN DUP OUT IN OUT EOS", "PUSH_3 IN MUL OUT EOS"]))
def test_feature_norm_bounded(pairs, source):
    p = make_problem(source, pairs, n_public=len(pairs))
    assert np.linalg.norm(problem_features(p)) <= math.sqrt(3) + 1e-12


def test_logits_match_direct_computation():
    rng = np.random.default_rng(1)
    for _ in range(20):
        params = random_params(rng)
        feats = rng.normal(size=8)
        ctx = [int(t) for t in rng.integers(0, V, rng.integers(0, 7))]
        expected = direct_logits(params.context_weights, params.problem_weights, params.bias, feats, ctx, V, 4)
        np.testing.assert_allclose(logits(params, feats, ctx), expected, rtol=1e-12, atol=1e-12)


def test_context_rows_pad_with_bos():
    rows = context_rows([5, 6])
    assert rows.shape == (2, 4)
    assert list(rows[0]) == [j * (V + 1) + BOS for j in range(4)]
    assert list(rows[1]) == [5] + [j * (V + 1) + BOS for j in range(1, 4)]


def test_uniform_logprobs():
    p = PolicyParams.zeros()
    f = np.zeros(p.n_features)
    assert sequence_logprob(p, f, parse_text("EOS")) == pytest.approx(math.log(1 / 22), abs=1e-12)
    assert sequence_logprob(p, f, parse_text("IN IN ADD OUT EOS")) == pytest.approx(5 * math.log(1 / 22), abs=1e-12)


def test_biased_context_logprob_near_zero():
    prog = parse_text("IN DUP ADD OUT EOS")
    p = PolicyParams.zeros()
    prev = BOS
    for tok in prog.tokens:
        p.context_weights[prev, tok] = 20.0  # j = 0 rows: previous token
        prev = tok
    assert sequence_logprob(p, np.zeros(p.n_features), prog) >= -0.01


def test_eos_gradient_under_uniform():
    p = PolicyParams.zeros()
    g = grad_sequence_logprob(p, np.zeros(p.n_features), parse_text("EOS"))
    expected = -np.full(V, 1 / 22)
    expected[EOS] += 1
    np.testing.assert_allclose(g.bias, expected, atol=1e-15)
    # only the BOS rows of the context block carry gradient for a first step
    touched = np.flatnonzero(np.abs(g.context_weights).sum(axis=1))
    assert list(touched) == [j * (V + 1) + BOS for j in range(4)]


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(120):
        params = random_params(rng)
        feats = rng.normal(size=8)
        prog = random_program(rng)
        g = grad_sequence_logprob(params, feats, prog).flat()
        u = rng.normal(size=g.size)
        u /= np.linalg.norm(u)
        fd = central_difference(lambda x: sequence_logprob(params.with_flat(x), feats, prog), params.flat(), u)
        an = float(g @ u)
        worst = max(worst, abs(an - fd) / max(abs(fd), abs(an), 1e-8))
    assert worst < 1e-4


def test_logit_shift_invariance():
    rng = np.random.default_rng(3)
    params = random_params(rng)
    shifted = PolicyParams(params.context_weights, params.problem_weights, params.bias + 7.5)
    feats = rng.normal(size=8)
    prog = parse_text("IN PUSH_2 MUL OUT EOS")
    assert sequence_logprob(params, feats, prog) == pytest.approx(sequence_logprob(shifted, feats, prog), abs=1e-10)
    g1 = grad_sequence_logprob(params, feats, prog).flat()
    g2 = grad_sequence_logprob(shifted, feats, prog).flat()
    np.testing.assert_allclose(g1, g2, atol=1e-12)
    u = stream(0, "t").random((4, 10))
    a = sample_batch(params, feats, 1.0, 10, u)
    b = sample_batch(shifted, feats, 1.0, 10, u)
    assert [s.program for s in a] == [s.program for s in b]
    np.testing.assert_allclose([e for s in a for e in s.step_entropies], [e for s in b for e in s.step_entropies],
                               atol=1e-12)


def test_probabilities_normalized():
    rng = np.random.default_rng(4)
    for _ in range(50):
        params = random_params(rng, scale=3.0)
        z = logits(params, rng.normal(size=8), [int(t) for t in rng.integers(0, V, 3)])
        assert abs(softmax(z).sum() - 1) < 1e-12


def test_sample_examples():
    p = PolicyParams.zeros()
    f = np.zeros(p.n_features)
    s = sample(p, f, 1.0, 16, stream(0, "x"))
    assert all(e == pytest.approx(LN_V, abs=1e-12) for e in s.step_entropies)
    assert s == sample(p, f, 1.0, 16, stream(0, "x"))
    p.bias[EOS] = 50
    s = sample(p, f, 1.0, 16, stream(1, "x"))
    assert s.program.tokens == (EOS,) and not s.program.truncated
    with pytest.raises(ValueError):
        sample(p, f, 0.0, 16, stream(0, "x"))


def test_sampled_sequence_invariants():
    rng = np.random.default_rng(5)
    params = random_params(rng, scale=1.0)
    feats = rng.normal(size=8)
    seqs = sample_batch(params, feats, 0.7, 12, stream(5, "s").random((64, 12)))
    for s in seqs:
        assert len(s.logprobs) == len(s.program) == len(s.step_entropies)
        assert all(lp <= 0 for lp in s.logprobs)
        assert all(0 <= e <= LN_V + 1e-12 for e in s.step_entropies)
        assert s.program.truncated == (s.program.tokens[-1] != EOS)
    # recorded logprobs are untempered and match a recomputation
    np.testing.assert_allclose([sum(s.logprobs) for s in seqs],
                               sequence_logprobs(params, feats, [s.program for s in seqs]), atol=1e-10)


def test_rows_are_independent_of_batch_size():
    rng = np.random.default_rng(6)
    params = random_params(rng)
    feats = rng.normal(size=8)
    u = stream(1, "u").random((16, 10))
    full = sample_batch(params, feats, 1.0, 10, u)
    part = sample_batch(params, feats, 1.0, 10, u[5:9])
    assert full[5:9] == part


def test_one_step_frequencies_within_three_standard_errors():
    rng = np.random.default_rng(7)
    params = random_params(rng, scale=0.8)
    feats = rng.normal(size=8)
    n = 100_000
    seqs = sample_batch(params, feats, 1.0, 1, stream(7, "freq").random((n, 1)))
    counts = np.bincount([s.program.tokens[0] for s in seqs], minlength=V)
    probs = softmax(logits(params, feats, []))
    se = np.sqrt(probs * (1 - probs) / n)
    assert np.all(np.abs(counts / n - probs) <= 3 * se)


def test_greedy_takes_argmax():
    p = PolicyParams.zeros()
    f = np.zeros(p.n_features)
    p.bias[TOKEN_IDS["IN"]] = 1.0
    p.context_weights[TOKEN_IDS["IN"], TOKEN_IDS["OUT"]] = 5.0
    p.context_weights[TOKEN_IDS["OUT"], EOS] = 5.0
    assert greedy(p, f, 8).render() == "IN OUT EOS"
    # ties go to the lowest id, so zero params loop on PUSH_0 until the cap
    prog = greedy(PolicyParams.zeros(), f, 5)
    assert prog.tokens == (0,) * 5 and prog.truncated


def test_mean_policy_entropy(toy_problems):
    assert mean_policy_entropy(PolicyParams.zeros(), toy_problems) == pytest.approx(LN_V, abs=1e-12)
    p = PolicyParams.zeros()
    p.bias[EOS] = 20
    assert mean_policy_entropy(p, toy_problems) < 0.05
    with pytest.raises(ValueError):
        mean_policy_entropy(p, [])


def test_entropy_helper_is_non_negative():
    lp = np.log(np.array([[1.0, 0.0 + 1e-300]]))
    assert entropy_of(lp, np.exp(lp))[0] >= 0


def test_frozen_reference_is_immutable():
    p = random_params(np.random.default_rng(8)).frozen()
    with pytest.raises(ValueError):
        p.bias[0] = 1.0
    before = p.flat().copy()
    sequence_logprob(p, np.ones(8), parse_text("IN OUT EOS"))
    assert np.array_equal(before, p.flat())
