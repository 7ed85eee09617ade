"""Adam with decoupled-from-nothing classic L2 weight decay, plus the cosine
learning-rate schedule used by every training loop in this package."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import DimensionError, Tensor


@dataclass
class OptimizerState:
    """First/second moment accumulators keyed like the parameter store."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_optimizer(params: dict[str, Tensor], weight_decay: float = 0.0,
                   beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    state = OptimizerState(beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)
    for key, p in params.items():
        state.m[key] = np.zeros_like(p.data)
        state.v[key] = np.zeros_like(p.data)
    return state


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: OptimizerState, lr: float) -> None:
    """One in-place Adam update over ``grads``.  Keys absent from ``grads``
    are left untouched (their moments do not advance either), which is what
    parameter freezing relies on."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for key, g in grads.items():
        p = params[key]
        if g.shape != p.data.shape:
            raise DimensionError(
                f"gradient for {key!r} has shape {g.shape}, parameter is {p.data.shape}"
            )
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m = state.m[key]
        v = state.v[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """base_lr * 0.5 * (1 + cos(pi * step / total_steps)), clamped past the end."""
    if total_steps <= 0:
        raise ValueError(f"total_steps must be positive, got {total_steps}")
    s = min(max(step, 0), total_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * s / total_steps))
