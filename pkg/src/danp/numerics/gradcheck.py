"""Central-difference gradient verification for taped computations."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import GradientError, Tape, Tensor, backward, zero_grads


def finite_diff_check(f: Callable[[], Tensor], params: dict[str, Tensor],
                      eps: float = 1e-3) -> float:
    """Max relative error between taped gradients of ``f()`` and central
    differences, probing every coordinate of every parameter.

    ``f`` must be a deterministic scalar function of ``params`` (re-invoked
    many times), and parameters must be float64 or the comparison is
    meaningless at any sensible tolerance.
    """
    for key, p in params.items():
        if p.data.dtype != np.float64:
            raise GradientError(f"finite_diff_check needs float64 params, {key!r} is {p.data.dtype}")
        if not p.requires_grad:
            raise GradientError(f"parameter {key!r} does not require grad")

    zero_grads(params)
    with Tape() as tape:
        loss = f()
    if loss.requires_grad:
        backward(loss, tape)

    worst = 0.0
    for key, p in params.items():
        # A param the loss never touches has zero gradient; the probe below
        # still catches wrongly-disconnected params through the numeric side.
        grad = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = f().item()
            flat[i] = keep - eps
            down = f().item()
            flat[i] = keep
            numeric = (up - down) / (2.0 * eps)
            analytic = float(grad.reshape(-1)[i])
            denom = max(abs(numeric), abs(analytic), 1e-8)
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst
