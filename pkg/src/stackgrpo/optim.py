"""Adaptive-moment optimizer shared by supervised and RL updates.

Update rule for a minimized loss with gradient g at step t = 1, 2, ...::

    m = beta1 * m + (1 - beta1) * g
    v = beta2 * v + (1 - beta2) * g**2
    theta -= lr * (m / (1 - beta1**t)) / (sqrt(v / (1 - beta2**t)) + eps)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policy import PolicyGrad, PolicyParams


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def for_params(cls, params: PolicyParams) -> "OptimizerState":
        n = params.flat().size
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params: PolicyParams, state: OptimizerState, grad: PolicyGrad,
              config: AdamConfig) -> tuple[PolicyParams, OptimizerState]:
    g = grad.flat()
    if g.shape != state.m.shape:
        raise ValueError("gradient does not match optimizer state")
    t = state.step + 1
    m = config.beta1 * state.m + (1 - config.beta1) * g
    v = config.beta2 * state.v + (1 - config.beta2) * g * g
    m_hat = m / (1 - config.beta1**t)
    v_hat = v / (1 - config.beta2**t)
    theta = params.flat() - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
    return params.with_flat(theta, version=params.version + 1), OptimizerState(m, v, t)
