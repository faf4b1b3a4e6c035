"""Adam with bias correction and per-parameter learning rates."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np


@dataclass
class AdamState:
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState,
              lr: Union[float, Mapping[str, float]]) -> tuple[dict, AdamState]:
    """Update ``params`` in place. ``lr`` is a scalar or a per-name mapping.

    Non-finite gradients abort the step before anything is modified.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            bad = np.argwhere(~np.isfinite(g))[0]
            raise FloatingPointError(f"non-finite gradient in {name} at index {tuple(int(i) for i in bad)}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, w in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        rate = lr[name] if isinstance(lr, Mapping) else lr
        w -= (rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(w.dtype)
    return params, state
