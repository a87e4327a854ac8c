import json
import math
import xml.etree.ElementTree as ET
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import INPUT_PAIRS, make_problem
from oracles import subset_pass_at_k
from stackgrpo.grpo import StepReport
from stackgrpo.lang import BOS, parse_text
from stackgrpo.metrics import (
    REPORT_SCHEMA, DomainError, EvalResult, ReportIOError, bucket_of, cluster_trace, emit_report, eval_rows,
    evaluate, mean_avg_at_1, pass_at_k, pass_at_k_exact, read_csv, render_svg, repetition_rate, trace_rows,
)
from stackgrpo.policy import PolicyParams


def test_pass_at_k_examples():
    assert pass_at_k(10, 10, 1) == 1.0
    assert pass_at_k(10, 0, 10) == 0.0
    assert pass_at_k_exact(10, 3, 5) == 1 - Fraction(21, 252)
    assert pass_at_k(10, 3, 5) == pytest.approx(0.9166667, abs=1e-7)


def test_pass_at_k_domain():
    for n, c, k in ((5, 6, 1), (5, -1, 1), (5, 2, 0), (5, 2, 6)):
        with pytest.raises(DomainError):
            pass_at_k(n, c, k)
    with pytest.raises(DomainError):
        pass_at_k(5.0, 2, 1)


def test_pass_at_k_matches_subset_enumeration_exactly():
    for n in range(1, 13):
        for c in range(n + 1):
            for k in range(1, n + 1):
                assert pass_at_k_exact(n, c, k) == subset_pass_at_k(n, c, k)
                assert abs(pass_at_k(n, c, k) - float(subset_pass_at_k(n, c, k))) < 1e-12


def test_pass_at_k_large_n_is_finite():
    v = pass_at_k(10_000, 17, 100)
    assert 0 < v < 1 and math.isfinite(v)
    assert v == pytest.approx(float(pass_at_k_exact(10_000, 17, 100)), rel=1e-9)


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 200), st.data())
def test_pass_at_k_monotone(n, data):
    c = data.draw(st.integers(0, n))
    k = data.draw(st.integers(1, n))
    v = pass_at_k(n, c, k)
    assert 0.0 <= v <= 1.0
    if k < n:
        assert pass_at_k(n, c, k + 1) >= v - 1e-12
    if c < n:
        assert pass_at_k(n, c + 1, k) >= v - 1e-12
    assert pass_at_k(n, c, 1) == pytest.approx(c / n, abs=1e-12)
    if c >= 1:
        assert pass_at_k(n, c, n) == 1.0


def test_repetition_examples():
    assert repetition_rate(parse_text("IN OUT IN OUT IN OUT EOS")) == 0.5
    assert repetition_rate(parse_text("IN IN ADD OUT EOS")) == 0.0
    assert repetition_rate([1, 1, 1]) == 0.0
    alt = [19, 20] * 12
    assert repetition_rate(alt) == 11 / 12
    assert repetition_rate([19, 20] * 50) > repetition_rate(alt)
    with pytest.raises(DomainError):
        repetition_rate([])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 21), min_size=1, max_size=30))
def test_repetition_bounds(tokens):
    assert 0.0 <= repetition_rate(tokens) < 1.0


def forcing_params(program):
    p = PolicyParams.zeros()
    prev = BOS
    for tok in program.tokens:
        p.context_weights[prev, tok] += 40.0
        prev = tok
    return p


def test_forced_reference_scores_one():
    prob = make_problem("IN NEG OUT EOS", INPUT_PAIRS, pid="neg", difficulty="easy")
    params = forcing_params(prob.reference)
    res = evaluate(params, [prob], 16, ks=(1, 4))
    assert res[0].c == 16 and res[0].pass_at_k == {1: 1.0, 4: 1.0} and res[0].avg_at_1 == 1.0
    greedy_res = evaluate(params, [prob], 4, use_greedy=True)
    assert greedy_res[0].c == 4


def test_zero_params_miss_hard_problems(desk_corpus):
    hard = [p for p in desk_corpus.problems if p.solution_density < 1e-4]
    assert hard
    res = evaluate(PolicyParams.zeros(), hard, 10)
    assert all(r.c == 0 for r in res)


def test_evaluate_is_deterministic_and_pure(toy_problems):
    rng = np.random.default_rng(0)
    params = PolicyParams.zeros().with_flat(rng.normal(0, 0.5, PolicyParams.zeros().flat().size))
    before = params.flat().copy()
    a = evaluate(params, toy_problems, 12, ks=(1, 5), seed=3, t_max=10)
    b = evaluate(params, toy_problems, 12, ks=(1, 5), seed=3, t_max=10, workers=4)
    assert a == b
    assert np.array_equal(params.flat(), before)
    for r in a:
        assert 0 <= r.c <= r.n and r.avg_at_1 == r.c / r.n
        assert r.pass_at_k[1] <= r.pass_at_k[5]
    with pytest.raises(DomainError):
        evaluate(params, toy_problems, 4, ks=(10,))
    assert math.isnan(mean_avg_at_1([]))


def test_bucket_edges():
    edges = (0.0, 0.25, 0.75, 1.0)
    assert [bucket_of(x, edges) for x in (0.0, 0.2499, 0.25, 0.74, 0.75, 1.0)] == [0, 0, 1, 1, 2, 2]


def test_cluster_singleton_and_degenerate():
    [low, med, high] = cluster_trace({"a": 0.3}, [{"a": 0.3}, {"a": 0.5}, {"a": 0.9}])
    assert med.problem_ids == ["a"] and list(med.series) == [0.3, 0.5, 0.9]
    assert low.empty and high.empty and np.all(np.isnan(low.series))
    assert med.gain == pytest.approx(0.6)
    assert math.isnan(low.gain)
    trio = cluster_trace({"a": 0, "b": 0}, [{"a": 0, "b": 0}])
    assert [c.empty for c in trio] == [False, True, True]
    with pytest.raises(DomainError):
        cluster_trace({"a": 0}, [{"a": 0}], (0.0, 0.5, 0.4, 1.0))
    with pytest.raises(DomainError):
        cluster_trace({"a": 0}, [{"a": 0}], (0.1, 1.0))


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(st.sampled_from("abcdefghij"), st.floats(0, 1), min_size=1), st.integers(1, 6), st.data())
def test_cluster_means_match_brute_force(initial, n_steps, data):
    steps = [{pid: data.draw(st.floats(0, 1)) for pid in initial} for _ in range(n_steps)]
    out = cluster_trace(initial, steps)
    seen = []
    for c in out:
        seen += c.problem_ids
        assert len(c.series) == n_steps
        for pid in c.problem_ids:
            r = initial[pid]
            assert c.lo <= r < c.hi or (c.hi == 1.0 and r == 1.0)
        for t in range(n_steps):
            if c.problem_ids:
                total = 0.0
                for pid in c.problem_ids:
                    total += steps[t][pid]
                assert abs(c.series[t] - total / len(c.problem_ids)) < 1e-12
    assert sorted(seen) == sorted(initial)


def reports():
    return [StepReport(step=i, stage="one", phase=0, pass_rates={"p1": i / 4, "p0": 0.125},
                       mean_reward=0.1 * i, mean_entropy=3.0 - 0.1 * i, truncation_rate=0.5 / (i + 1),
                       loss=-0.01 * i, kl=0.0) for i in range(4)]


def evals():
    return [EvalResult("p0", 8, 3, {1: 0.375, 4: pass_at_k(8, 3, 4)}, 0.375, "easy"),
            EvalResult("p1", 8, 0, {1: 0.0, 4: 0.0}, 0.0, "hard")]


def test_report_round_trip(tmp_path):
    clusters = cluster_trace({"p0": 0.125, "p1": 0.0}, [t.pass_rates for t in reports()])
    paths = emit_report(tmp_path, reports(), evals(), clusters=clusters, budgets={8: [0.0, 0.5], 64: [0.0, 1.0]},
                        name="r")
    names = sorted(p.split("/")[-1] for p in paths)
    assert names == ["r.json", "r.svg", "r_eval.csv", "r_pass_rates.csv", "r_trace.csv"]
    tag, rows = read_csv(tmp_path / "r_trace.csv")
    assert tag == REPORT_SCHEMA and rows == trace_rows(reports())
    tag, erows = read_csv(tmp_path / "r_eval.csv")
    assert erows == eval_rows(evals())
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["schema"] == REPORT_SCHEMA
    assert doc["trace"] == rows and doc["eval"] == erows
    assert doc["budgets"] == {"8": [0.0, 0.5], "64": [0.0, 1.0]}
    assert [c["label"] for c in doc["clusters"]] == ["low", "medium", "high"]
    assert doc["clusters"][2]["series"] == [None] * 4
    _, prow = read_csv(tmp_path / "r_pass_rates.csv")
    assert [r["p1"] for r in prow] == [0.0, 0.25, 0.5, 0.75]
    ET.fromstring((tmp_path / "r.svg").read_text())


def test_empty_report_has_headers(tmp_path):
    emit_report(tmp_path, formats=("csv", "json"), name="e")
    lines = (tmp_path / "e_trace.csv").read_text().splitlines()
    assert lines == [f"# {REPORT_SCHEMA}", "step,stage,phase,mean_reward,mean_entropy,truncation_rate,loss,kl"]
    assert read_csv(tmp_path / "e_eval.csv")[1] == []
    assert json.loads((tmp_path / "e.json").read_text())["trace"] == []


def test_svg_is_reproducible_xml():
    a = render_svg(reports())
    assert a == render_svg(reports())
    root = ET.fromstring(a)
    assert root.tag.endswith("svg")
    ET.fromstring(render_svg())


def test_report_errors(tmp_path):
    with pytest.raises(DomainError):
        emit_report(tmp_path, formats=("pdf",))
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ReportIOError) as err:
        emit_report(blocker / "sub", reports(), formats=("csv",))
    assert "file" in err.value.path
