"""RMSprop with the update rule used by common deep-learning frameworks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    learning_rate: float = 1e-4
    rho: float = 0.9
    epsilon: float = 1e-7
    # running mean of squared gradients, one array per parameter
    s: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], **kwargs) -> "OptimizerState":
        return cls(s={k: np.zeros_like(v) for k, v in params.items()}, **kwargs)


def rmsprop_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState):
    """One in-place update; returns ``(params, state)`` for convenience.

    s <- rho * s + (1 - rho) * g**2
    w <- w - lr * g / (sqrt(s) + eps)
    """
    rho, lr, eps = state.rho, state.learning_rate, state.epsilon
    for name, g in grads.items():
        w = params[name]
        s = state.s.get(name)
        if s is None:
            s = state.s[name] = np.zeros_like(w)
        g = g.astype(w.dtype, copy=False)
        s *= rho
        s += (1.0 - rho) * g * g
        w -= lr * g / (np.sqrt(s) + eps)
    state.step += 1
    return params, state
