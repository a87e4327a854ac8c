"""Small builders shared by the test modules."""

from __future__ import annotations

from stackgrpo.corpus import Problem, TestCase
from stackgrpo.lang import execute, parse_text


def make_problem(source, inputs, pid="t000", difficulty="medium", n_public=2, density=1e-3):
    """A Problem whose cases come from running ``source`` on each input tuple."""
    ref = parse_text(source)
    cases = tuple(TestCase(tuple(x), execute(ref, x).outputs) for x in inputs)
    return Problem(
        id=pid,
        public_cases=cases[:n_public],
        hidden_cases=cases[n_public:],
        difficulty=difficulty,
        min_solution_len=len(ref),
        solution_density=density,
        reference=ref,
    )


INPUT_PAIRS = [(2, 3), (0, 0), (-1, 4), (5, -7), (9, 9), (-3, -8), (4, 1), (7, -2), (-6, 5), (1, 8)]


def bandit_problem():
    """Every case expects no output, so with t_max = 1 only the program [EOS] earns reward."""
    return make_problem("EOS", [(1,), (2,), (3,), (4,), (5,)], pid="bandit", difficulty="easy")


def bandit_curve(seed, steps=20, group_size=8):
    """Probability of EOS at the first step, before training and after each GRPO step."""
    import numpy as np

    from stackgrpo.grpo import GrpoConfig, train_step
    from stackgrpo.lang import EOS
    from stackgrpo.optim import OptimizerState
    from stackgrpo.policy import PolicyParams, logits, problem_features

    prob = bandit_problem()
    feats = problem_features(prob)
    params = PolicyParams.zeros()
    opt = OptimizerState.for_params(params)
    cfg = GrpoConfig(group_size=group_size, t_max=1)

    def p_eos(p):
        z = logits(p, feats, [])
        e = np.exp(z - z.max())
        return float(e[EOS] / e.sum())

    curve = [p_eos(params)]
    for step in range(steps):
        params, opt, _, _ = train_step(params, opt, [prob], cfg, seed=seed, step=step, stage="bandit")
        curve.append(p_eos(params))
    return curve
