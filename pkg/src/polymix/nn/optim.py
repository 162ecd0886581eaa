"""Adam with bias correction and the per-epoch learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BASE_LR = 1e-4
EPOCH_DECAY = 0.9


@dataclass
class AdamState:
    base_lr: float = BASE_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def scheduled_lr(base_lr: float, epoch: int, plateau_factor: float = 1.0,
                 decay: float = EPOCH_DECAY) -> float:
    """``base_lr * decay**epoch * plateau_factor`` (epochs count from 0)."""
    return base_lr * decay ** epoch * plateau_factor


def adam_step(state: AdamState, params: dict, grads: dict, lr: float | None = None) -> None:
    """Update ``params`` in place."""
    lr = state.base_lr if lr is None else lr
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ValueError(f"{key}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(p)
            state.v[key] = np.zeros_like(p)
        v = state.v[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
