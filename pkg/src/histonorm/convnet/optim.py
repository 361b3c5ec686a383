"""ADAM parameter updates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import NetworkParams


@dataclass
class AdamState:
    """First and second moment estimates plus the step counter."""

    m: NetworkParams
    v: NetworkParams
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, params: NetworkParams, **hyper) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0, **hyper)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t, self.beta1, self.beta2, self.epsilon)


def adam_step(
    params: NetworkParams, grads: NetworkParams, state: AdamState, lr: float
) -> tuple[NetworkParams, AdamState]:
    """One bias-corrected ADAM update; inputs are left untouched."""
    new_params, new_state = params.copy(), state.copy()
    new_state.t += 1
    t = new_state.t
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(new_params.arrays(), grads.arrays(), new_state.m.arrays(), new_state.v.arrays()):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)).astype(p.dtype)
    return new_params, new_state
