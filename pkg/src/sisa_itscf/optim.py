"""Bias-corrected Adam over a parameter dict."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lstm import Params


@dataclass
class AdamState:
    m: Params
    v: Params
    t: int = 0

    @classmethod
    def zeros(cls, params: Params) -> AdamState:
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)

    def copy(self) -> AdamState:
        return AdamState({k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()}, self.t)


def adam_step(
    params: Params,
    grads: Params,
    state: AdamState,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[Params, AdamState]:
    """One Adam update. Returns new arrays; inputs are left untouched."""
    if set(grads) != set(params) or set(state.m) != set(params):
        raise ValueError("params, grads and optimizer state must share keys")
    if state.t < 0:
        raise ValueError("optimizer step counter must be >= 0")
    t = state.t + 1
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ValueError(f"{k}: shape mismatch {p.shape} vs grad {g.shape}")
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * (g * g)
        new_p[k] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_m[k] = m
        new_v[k] = v
    return new_p, AdamState(new_m, new_v, t)
