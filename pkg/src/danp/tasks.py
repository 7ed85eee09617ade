"""Task container shared by the model, the training loops, and the samplers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_MASK64 = (1 << 64) - 1


class MalformedTaskError(ValueError):
    """A task violates the shape or split contract."""


@dataclass
class TaskBatch:
    """One regression task: inputs, labels, and a context/target split.

    ``x`` is [n, d_x], ``y`` is [n, d_y]; ``context_indices`` is a sorted,
    nonempty, strict subset of row indices.  All remaining rows are targets.
    """

    x: np.ndarray
    y: np.ndarray
    context_indices: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float32)
        self.y = np.ascontiguousarray(self.y, dtype=np.float32)
        self.context_indices = np.asarray(self.context_indices, dtype=np.int64)
        if self.x.ndim != 2 or self.y.ndim != 2:
            raise MalformedTaskError(
                f"x and y must be 2-D, got x {self.x.shape}, y {self.y.shape}"
            )
        if self.x.shape[1] < 1 or self.y.shape[1] < 1:
            raise MalformedTaskError(
                f"need d_x >= 1 and d_y >= 1, got x {self.x.shape}, y {self.y.shape}"
            )
        n = self.x.shape[0]
        if self.y.shape[0] != n:
            raise MalformedTaskError(
                f"x has {n} rows but y has {self.y.shape[0]}"
            )
        c = self.context_indices
        if c.ndim != 1 or c.size == 0 or c.size >= n:
            raise MalformedTaskError(
                f"context must be a nonempty strict subset: |c|={c.size}, n={n}"
            )
        if np.unique(c).size != c.size or c.min() < 0 or c.max() >= n:
            raise MalformedTaskError("context indices must be unique and in range")
        self.context_indices = np.sort(c)
        if not (np.isfinite(self.x).all() and np.isfinite(self.y).all()):
            raise MalformedTaskError("task contains non-finite values")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d_x(self) -> int:
        return self.x.shape[1]

    @property
    def d_y(self) -> int:
        return self.y.shape[1]

    @property
    def target_indices(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.context_indices] = False
        return np.nonzero(mask)[0]


def derive_seed(seed: int, index: int) -> int:
    """Decorrelated 64-bit sub-seed: a splitmix-style avalanche of seed ^ index.

    Used everywhere a stream of independent tasks or runs is drawn from one
    master seed, so that item ``index`` is reproducible in isolation.
    """
    z = (int(seed) ^ int(index)) & _MASK64
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


# Disjoint offsets for the independent seed streams hanging off one master
# seed.  Task-stream indices use the raw index; everything else is bumped into
# its own 2^48-sized block.
STREAM_TRAIN_TASKS = 0
STREAM_EVAL_TASKS = 1 << 48
STREAM_INIT = 2 << 48
STREAM_LATENT = 3 << 48
STREAM_BO = 4 << 48
STREAM_FINETUNE_TASKS = 5 << 48
