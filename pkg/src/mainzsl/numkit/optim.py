"""First-order optimizers over flat ``{name: array}`` parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, NumericError


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def copy(self) -> "AdamState":
        return AdamState(
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
            self.step_count,
            self.beta1,
            self.beta2,
            self.epsilon,
        )


def check_grads(params: dict, grads: dict) -> None:
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise DimensionError(f"missing gradient for {name}")
        if np.shape(g) != np.shape(p):
            raise DimensionError(f"{name}: gradient shape {np.shape(g)} != parameter shape {np.shape(p)}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in {name}")


def adam_update(params: dict, grads: dict, state: AdamState, lr: float):
    """One bias-corrected Adam step. Returns ``(new_params, new_state)``; inputs are not modified."""
    check_grads(params, grads)
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = g * (1.0 - b1)
        v = np.square(g)
        v *= 1.0 - b2
        if name in state.m:
            m += b1 * state.m[name]
            v += b2 * state.v[name]
        new_m[name], new_v[name] = m, v
        denom = np.sqrt(v / c2)
        denom += state.epsilon
        step = m * (lr / c1)
        step /= denom
        new_p[name] = p - step
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.epsilon)


def sgd_update(params: dict, grads: dict, lr: float) -> dict:
    check_grads(params, grads)
    return {name: p - lr * grads[name] for name, p in params.items()}
