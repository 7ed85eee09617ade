"""Seedable generators of GP regression tasks and experiment scenarios.

Every task is a pure function of (seed, index) through ``derive_seed``, so
streams can be generated lazily, in parallel, and re-created item by item.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .tasks import (
    STREAM_EVAL_TASKS,
    STREAM_FINETUNE_TASKS,
    STREAM_TRAIN_TASKS,
    MalformedTaskError,
    TaskBatch,
    derive_seed,
)

log = logging.getLogger(__name__)

KERNEL_FAMILIES = ("rbf", "matern52")
DEFAULT_NOISE_STD = 0.02
DEFAULT_EVAL_TASKS = 3000
DEFAULT_FINETUNE_TASKS = 160

_SQRT5 = np.sqrt(5.0)


@dataclass(frozen=True)
class KernelSpec:
    family: str
    s: float
    ell: float
    noise_std: float = DEFAULT_NOISE_STD

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"kernel family must be one of {KERNEL_FAMILIES}, got {self.family!r}")
        if self.s <= 0 or self.ell <= 0 or self.noise_std <= 0:
            raise ValueError("kernel spec requires s, ell, noise_std > 0")


def kernel_matrix(spec: KernelSpec, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Gram matrix between two point sets [n, d] and [m, d]."""
    xa = np.asarray(xa, dtype=np.float64)
    xb = np.asarray(xb, dtype=np.float64)
    if xa.shape[1] != xb.shape[1]:
        raise ValueError(f"point dims differ: {xa.shape} vs {xb.shape}")
    d = cdist(xa, xb)
    if spec.family == "rbf":
        return spec.s ** 2 * np.exp(-(d ** 2) / (2.0 * spec.ell ** 2))
    r = _SQRT5 * d / spec.ell
    return spec.s ** 2 * (1.0 + r + (5.0 * d ** 2) / (3.0 * spec.ell ** 2)) * np.exp(-r)


def kernel_eval(spec: KernelSpec, x: np.ndarray, x_other: np.ndarray) -> float:
    """Covariance between two single points."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    x_other = np.atleast_1d(np.asarray(x_other, dtype=np.float64))
    if x.shape != x_other.shape:
        raise ValueError(f"point dims differ: {x.shape} vs {x_other.shape}")
    return float(kernel_matrix(spec, x[None, :], x_other[None, :])[0, 0])


def sample_counts(d_x: int, rng: np.random.Generator) -> tuple[int, int]:
    """(|context|, |target|): |c| ~ Unif{5 d_x^2 .. 45 d_x^2}, then
    |t| ~ Unif{5 d_x^2 .. 50 d_x^2 - |c|}, inclusive integer uniforms."""
    if d_x < 1:
        raise ValueError(f"d_x must be >= 1, got {d_x}")
    lo = 5 * d_x * d_x
    hi = 50 * d_x * d_x
    n_ctx = int(rng.integers(lo, hi - lo, endpoint=True))
    n_tgt = int(rng.integers(lo, hi - n_ctx, endpoint=True))
    return n_ctx, n_tgt


def sample_gp_task(d_x: int, d_y: int, family: str, rng: np.random.Generator,
                   noise_std: float = DEFAULT_NOISE_STD) -> TaskBatch:
    """One GP regression task with d_y independent output channels.

    Draw order is fixed (counts, inputs, s, ell, permutation, channel
    noises): the same generator state always yields the same task.  Inputs
    are Unif(-2, 2)^d_x; each channel is y ~ N(0, K + noise_std^2 I) sampled
    through a Cholesky factor with a 1e-6 -> 1e-4 jitter ladder; if both
    jitters fail the task is resampled from a sub-seed drawn from ``rng``.
    """
    if d_y < 1:
        raise ValueError(f"d_y must be >= 1, got {d_y}")
    n_ctx, n_tgt = sample_counts(d_x, rng)
    n = n_ctx + n_tgt
    x = rng.uniform(-2.0, 2.0, size=(n, d_x))
    s = float(rng.uniform(0.1, 1.0))
    ell = float(rng.uniform(0.1, 0.6))
    perm = rng.permutation(n)
    spec = KernelSpec(family=family, s=s, ell=ell, noise_std=noise_std)
    gram = kernel_matrix(spec, x, x)

    chol = None
    for jitter in (1e-6, 1e-4):
        try:
            chol = np.linalg.cholesky(gram + (noise_std ** 2 + jitter) * np.eye(n))
            break
        except np.linalg.LinAlgError:
            continue
    if chol is None:
        sub = int(rng.integers(0, 2 ** 63))
        log.warning("Cholesky failed at both jitters (n=%d, s=%.3f, ell=%.3f); "
                    "resampling with sub-seed %d", n, s, ell, sub)
        return sample_gp_task(d_x, d_y, family, np.random.default_rng(sub), noise_std)

    y = np.empty((n, d_y))
    for ch in range(d_y):
        y[:, ch] = chol @ rng.standard_normal(n)
    return TaskBatch(
        x=x, y=y, context_indices=perm[:n_ctx],
        meta={"family": family, "s": s, "ell": ell, "noise_std": noise_std},
    )


@dataclass(frozen=True)
class TaskDistribution:
    """Law of one task: candidate input dims, output dim, kernel family."""

    dims: tuple
    d_y: int = 1
    family: str = "rbf"
    noise_std: float = DEFAULT_NOISE_STD

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.dims) == 0 or any(d < 1 for d in self.dims):
            raise ValueError(f"dims must be a nonempty set of positive ints, got {self.dims}")
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"kernel family must be one of {KERNEL_FAMILIES}")

    def sample(self, rng: np.random.Generator) -> TaskBatch:
        # The dim draw happens only for mixed-dim laws, so single-dim streams
        # stay aligned with a direct sample_gp_task call.
        d_x = self.dims[0] if len(self.dims) == 1 else int(rng.choice(self.dims))
        return sample_gp_task(d_x, self.d_y, self.family, rng, self.noise_std)


@dataclass(frozen=True)
class TaskStream:
    """Lazy infinite sequence of tasks: item i is a pure function of
    (seed, base + i)."""

    dist: TaskDistribution
    seed: int
    base: int = STREAM_TRAIN_TASKS

    def task(self, index: int) -> TaskBatch:
        rng = np.random.default_rng(derive_seed(self.seed, self.base + index))
        return self.dist.sample(rng)

    def take(self, count: int) -> list[TaskBatch]:
        return [self.task(i) for i in range(count)]


@dataclass(frozen=True)
class EvalSuite:
    name: str
    stream: TaskStream
    count: int = DEFAULT_EVAL_TASKS

    @property
    def d_x(self) -> int:
        return self.stream.dist.dims[0]

    def tasks(self, count: int | None = None) -> list[TaskBatch]:
        return self.stream.take(self.count if count is None else count)


@dataclass
class Scenario:
    name: str
    train_stream: TaskStream | None
    eval_suites: list = field(default_factory=list)
    finetune_tasks: list = field(default_factory=list)


def _eval_suite(d_x: int, d_y: int, family: str, seed: int, count: int,
                noise_std: float) -> EvalSuite:
    dist = TaskDistribution(dims=(d_x,), d_y=d_y, family=family, noise_std=noise_std)
    # Each eval dim gets its own seed block, disjoint from training indices.
    stream = TaskStream(dist=dist, seed=seed, base=STREAM_EVAL_TASKS + (d_x << 32))
    return EvalSuite(name=f"{family}-d{d_x}", stream=stream, count=count)


def build_scenario(name: str, *, seed: int, d_x: int = 1, d_y: int = 1,
                   family: str = "rbf", train_dims=None, eval_dims=None,
                   eval_tasks: int = DEFAULT_EVAL_TASKS,
                   task_count: int = DEFAULT_FINETUNE_TASKS,
                   noise_std: float = DEFAULT_NOISE_STD) -> Scenario:
    """Assemble the train stream and eval suites for one protocol.

    from_scratch: infinite stream at fixed (d_x, d_y), one eval suite.
    zero_shot: stream mixing train_dims uniformly, one eval suite per eval dim.
    fine_tune: finite list of task_count tasks at d_x, one eval suite.
    """
    if name == "from_scratch":
        dist = TaskDistribution(dims=(d_x,), d_y=d_y, family=family, noise_std=noise_std)
        return Scenario(
            name=name,
            train_stream=TaskStream(dist=dist, seed=seed),
            eval_suites=[_eval_suite(d_x, d_y, family, seed, eval_tasks, noise_std)],
        )
    if name == "zero_shot":
        if not train_dims or not eval_dims:
            raise ValueError("zero_shot needs nonempty train_dims and eval_dims")
        dist = TaskDistribution(dims=tuple(sorted(set(train_dims))), d_y=d_y,
                                family=family, noise_std=noise_std)
        suites = [_eval_suite(d, d_y, family, seed, eval_tasks, noise_std)
                  for d in sorted(set(eval_dims))]
        return Scenario(
            name=name,
            train_stream=TaskStream(dist=dist, seed=seed),
            eval_suites=suites,
        )
    if name == "fine_tune":
        if task_count < 1:
            raise ValueError(f"task_count must be >= 1, got {task_count}")
        dist = TaskDistribution(dims=(d_x,), d_y=d_y, family=family, noise_std=noise_std)
        stream = TaskStream(dist=dist, seed=seed, base=STREAM_FINETUNE_TASKS)
        return Scenario(
            name=name,
            train_stream=None,
            eval_suites=[_eval_suite(d_x, d_y, family, seed, eval_tasks, noise_std)],
            finetune_tasks=stream.take(task_count),
        )
    raise ValueError(f"unknown scenario {name!r}")


_HEADER_RE = re.compile(
    r"^DANP-TASK v1 d_x=(\d+) d_y=(\d+) n=(\d+)\s*$"
)


def grid_task_from_file(path: str, rng: np.random.Generator) -> TaskBatch:
    """Load one task from a text table and split it with the GP count law.

    Format: line 1 is ``DANP-TASK v1 d_x=<int> d_y=<int> n=<int>``, then n
    lines of d_x + d_y space-separated floats (x features first).  The
    context size comes from ``sample_counts`` at the file's d_x, clipped to
    n - 1 so targets stay nonempty; all remaining rows are targets.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        m = _HEADER_RE.match(header)
        if not m:
            raise MalformedTaskError(f"bad grid-task header: {header.strip()!r}")
        d_x, d_y, n = (int(g) for g in m.groups())
        if n < 10:
            raise MalformedTaskError(f"grid task needs n >= 10, header says n={n}")
        rows = np.empty((n, d_x + d_y), dtype=np.float64)
        for i in range(n):
            line = fh.readline()
            if not line:
                raise MalformedTaskError(f"file ends at row {i + 1}, header promised {n}")
            parts = line.split()
            if len(parts) != d_x + d_y:
                raise MalformedTaskError(
                    f"row {i + 1} has {len(parts)} values, expected {d_x + d_y}"
                )
            try:
                rows[i] = [float(p) for p in parts]
            except ValueError as err:
                raise MalformedTaskError(f"row {i + 1}: {err}") from None
    if not np.isfinite(rows).all():
        raise MalformedTaskError("grid task contains non-finite values")

    n_ctx, _ = sample_counts(d_x, rng)
    n_ctx = min(n_ctx, n - 1)
    perm = rng.permutation(n)
    return TaskBatch(x=rows[:, :d_x], y=rows[:, d_x:], context_indices=perm[:n_ctx],
                     meta={"source": str(path)})
