from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    """SGD with momentum: ``V = beta * V + lr * g``; ``W -= V``."""

    lr: float = 0.001
    momentum: float = 0.9
    velocity: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, lr: float = 0.001, momentum: float = 0.9) -> "OptimizerState":
        return cls(lr, momentum, {k: np.zeros_like(v) for k, v in params.items()})


def sgd_momentum_step(params: dict, grads: dict, state: OptimizerState) -> dict:
    """Update ``params`` and ``state.velocity`` in place; returns ``params``."""
    for k, w in params.items():
        g = grads[k]
        v = state.velocity.get(k)
        if v is None:
            v = state.velocity[k] = np.zeros_like(w)
        if g.shape != w.shape or v.shape != w.shape:
            raise ValueError(f"{k}: gradient {g.shape} / velocity {v.shape} do not match parameter {w.shape}")
        v *= state.momentum
        v += state.lr * g
        w -= v
    return params
