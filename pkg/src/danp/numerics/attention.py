"""Multi-head scaled-dot-product attention built from the tape primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import (
    MASK_FILL,
    DimensionError,
    Tensor,
    add,
    matmul,
    mul,
    permute,
    reshape,
    softmax_rows,
    transpose_last,
)


class IsolatedQueryError(ValueError):
    """An attention mask leaves some query with nothing to attend to."""


@dataclass
class AttentionWeights:
    """Projection weights for one attention layer; all square [d x d] plus biases."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bq: Tensor
    bk: Tensor
    bv: Tensor
    bo: Tensor


def check_mask(mask: np.ndarray) -> None:
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("attention mask entries must be 0 or 1")
    if (mask.sum(axis=-1) == 0).any():
        raise IsolatedQueryError("attention mask has a query row with no attendable keys")


def _split_heads(t: Tensor, heads: int) -> Tensor:
    """[..., n, d] -> [..., heads, n, d/heads]."""
    *lead, n, d = t.shape
    t = reshape(t, tuple(lead) + (n, heads, d // heads))
    nd = t.ndim
    axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    return permute(t, axes)


def _merge_heads(t: Tensor) -> Tensor:
    """[..., heads, n, dh] -> [..., n, heads*dh]."""
    nd = t.ndim
    axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    t = permute(t, axes)
    *lead, n, heads, dh = t.shape
    return reshape(t, tuple(lead) + (n, heads * dh))


def multihead_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    heads: int,
    weights: AttentionWeights,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Attention over the second-to-last axis; any leading axes are batch.

    ``mask`` is a {0,1} ndarray of shape [n_q, n_k], shared across batch and
    heads; 0 entries are excluded from the softmax by an additive -1e9.
    A query row whose mask is all zero is an error, not a silent uniform.
    """
    d = q.shape[-1]
    if d % heads != 0:
        raise DimensionError(f"model width {d} not divisible by heads {heads}")
    if k.shape[-1] != d or v.shape[-1] != d:
        raise DimensionError(
            f"attention width mismatch: q {q.shape}, k {k.shape}, v {v.shape}"
        )
    if k.shape[:-1] != v.shape[:-1]:
        raise DimensionError(f"k/v token counts differ: {k.shape} vs {v.shape}")

    n_q, n_k = q.shape[-2], k.shape[-2]
    if mask is not None:
        mask = np.asarray(mask)
        if mask.ndim != 2 or mask.shape != (n_q, n_k):
            raise DimensionError(
                f"mask shape {mask.shape} does not cover [{n_q} x {n_k}] tokens"
            )
        check_mask(mask)

    qh = _split_heads(add(matmul(q, weights.wq), weights.bq), heads)
    kh = _split_heads(add(matmul(k, weights.wk), weights.bk), heads)
    vh = _split_heads(add(matmul(v, weights.wv), weights.bv), heads)

    scores = mul(matmul(qh, transpose_last(kh)), 1.0 / math.sqrt(d // heads))
    if mask is not None:
        bias = ((1.0 - mask) * MASK_FILL).astype(scores.dtype)
        scores = add(scores, bias)
    attn = softmax_rows(scores)
    mixed = _merge_heads(matmul(attn, vh))
    return add(matmul(mixed, weights.wo), weights.bo)
