"""Bayesian-optimization harness: benchmark objectives, Expected Improvement
over a predictive surrogate, the sequential loop, and regret accounting.
Everything minimizes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import ndtr

from .taskgen import KernelSpec, kernel_matrix
from .tasks import TaskBatch

log = logging.getLogger(__name__)

OBJECTIVE_NAMES = ("ackley", "cosine", "rastrigin", "gp_sample")
DEFAULT_DOMAIN = (-2.0, 2.0)
DEFAULT_POOL_SIZE = 256
DEFAULT_INIT_POINTS = 5


class DegenerateObjectiveError(ValueError):
    """All observed values are identical; normalized regret is undefined."""


def _ackley(x: np.ndarray) -> float:
    # Grouped as two vanishing differences so the origin is exactly 0.0.
    a, b, c = 20.0, 0.2, 2.0 * np.pi
    d = x.size
    radial = a * (1.0 - np.exp(-b * np.sqrt((x ** 2).sum() / d)))
    periodic = np.e - np.exp(np.cos(c * x).sum() / d)
    return float(radial + periodic)


def _cosine(x: np.ndarray) -> float:
    return float((np.cos(x) * (0.1 / (2.0 * np.pi) * np.abs(x) - 1.0)).sum())


def _rastrigin(x: np.ndarray) -> float:
    return float(10.0 * x.size + (x ** 2 - 10.0 * np.cos(2.0 * np.pi * x)).sum())


class _LazyGPSample:
    """A GP draw realized lazily: each new query is sampled from the
    posterior conditioned on every previous (x, f) pair of this instance."""

    def __init__(self, dim: int, seed: int):
        self.spec = KernelSpec(family="rbf", s=1.0, ell=0.3, noise_std=1e-3)
        self.rng = np.random.default_rng(seed)
        self.xs: list[np.ndarray] = []
        self.fs: list[float] = []
        self.jitter = 1e-8

    def __call__(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64)
        for seen, f in zip(self.xs, self.fs):
            if np.array_equal(seen, x):
                return f
        prior_var = self.spec.s ** 2
        if not self.xs:
            f = float(self.rng.standard_normal() * np.sqrt(prior_var))
        else:
            X = np.stack(self.xs)
            K = kernel_matrix(self.spec, X, X) + self.jitter * np.eye(len(self.xs))
            k = kernel_matrix(self.spec, X, x[None, :])[:, 0]
            factor = cho_factor(K)
            alpha = cho_solve(factor, np.asarray(self.fs))
            mean = float(k @ alpha)
            var = prior_var + self.jitter - float(k @ cho_solve(factor, k))
            f = mean + float(self.rng.standard_normal()) * np.sqrt(max(var, 0.0))
        self.xs.append(x.copy())
        self.fs.append(f)
        return f


@dataclass
class Objective:
    name: str
    dim: int
    evaluator: Callable[[np.ndarray], float]
    domain: tuple = DEFAULT_DOMAIN
    optimum: float | None = None

    def __call__(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.size != self.dim:
            raise ValueError(f"{self.name} expects dim {self.dim}, got point of size {x.size}")
        lo, hi = self.domain
        if (x < lo).any() or (x > hi).any():
            log.warning("query outside domain %s clipped: %s", self.domain, x)
            x = np.clip(x, lo, hi)
        return float(self.evaluator(x))


def make_objective(name: str, dim: int, seed: int = 0,
                   domain: tuple = DEFAULT_DOMAIN) -> Objective:
    """Benchmark objective by name; "gp_sample" draws a fresh random function
    per (seed) and has no known optimum."""
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if name == "ackley":
        return Objective(name, dim, _ackley, domain, optimum=0.0)
    if name == "rastrigin":
        return Objective(name, dim, _rastrigin, domain, optimum=0.0)
    if name == "cosine":
        # Global minimum -d at the origin on the default domain.
        opt = -float(dim) if domain == DEFAULT_DOMAIN else None
        return Objective(name, dim, _cosine, domain, optimum=opt)
    if name == "gp_sample":
        return Objective(name, dim, _LazyGPSample(dim, seed), domain, optimum=None)
    raise ValueError(f"objective must be one of {OBJECTIVE_NAMES}, got {name!r}")


def expected_improvement(mu, sigma, best) -> np.ndarray:
    """EI for minimization; sigma = 0 collapses to max(best - mu, 0)."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0):
        raise ValueError("expected_improvement requires sigma >= 0")
    improve = best - mu
    out = np.maximum(improve, 0.0)
    pos = sigma > 0
    z = np.divide(improve, sigma, out=np.zeros_like(mu), where=pos)
    pdf = np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
    ei = improve * ndtr(z) + sigma * pdf
    return np.where(pos, ei, out)


@dataclass
class BORun:
    """History of one minimization run; the first n_init entries are the
    initial design, the rest one query per iteration."""

    xs: np.ndarray
    ys: np.ndarray
    best_trace: np.ndarray
    n_init: int
    seed: int
    objective: str
    dim: int
    fallback_iters: list = field(default_factory=list)


def bo_loop(objective: Objective, surrogate, iters: int,
            init_points: int = DEFAULT_INIT_POINTS,
            pool_size: int = DEFAULT_POOL_SIZE,
            seed: int = 0) -> BORun:
    """Sequential minimization of ``objective``.

    ``surrogate(task) -> (mean, std)`` receives a TaskBatch whose context is
    the (z-scored) history and whose targets are a fresh uniform candidate
    pool; its predictions are de-standardized and scored with EI.  A None
    surrogate is the random-search baseline (uniform candidate pick).  All
    randomness comes from ``seed``.
    """
    if iters < 1 or init_points < 1 or pool_size < 1:
        raise ValueError("iters, init_points, pool_size must all be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = objective.domain
    dim = objective.dim

    xs = [rng.uniform(lo, hi, size=dim) for _ in range(init_points)]
    ys = [objective(x) for x in xs]
    best_trace = list(np.minimum.accumulate(ys))
    fallback_iters: list[int] = []

    for it in range(iters):
        pool = rng.uniform(lo, hi, size=(pool_size, dim))
        if surrogate is None:
            pick = int(rng.integers(pool_size))
        else:
            hist_y = np.asarray(ys)
            y_mean = float(hist_y.mean())
            y_std = float(hist_y.std())
            if y_std == 0.0:
                y_std = 1.0
            task = TaskBatch(
                x=np.concatenate([np.stack(xs), pool], axis=0),
                y=np.concatenate([(hist_y - y_mean) / y_std,
                                  np.zeros(pool_size)])[:, None],
                context_indices=np.arange(len(xs)),
            )
            mean_z, std_z = surrogate(task)
            mean_z = np.asarray(mean_z, dtype=np.float64).reshape(-1)[len(xs):]
            std_z = np.asarray(std_z, dtype=np.float64).reshape(-1)[len(xs):]
            mu = mean_z * y_std + y_mean
            sigma = std_z * y_std
            ei = expected_improvement(mu, sigma, min(ys))
            if np.all(ei <= 0.0):
                pick = int(np.argmax(sigma))
                fallback_iters.append(it)
                log.info("iteration %d: EI vanished everywhere, exploring argmax-sigma", it)
            else:
                pick = int(np.argmax(ei))
        x_next = pool[pick]
        ys.append(objective(x_next))
        xs.append(x_next)
        best_trace.append(min(best_trace[-1], ys[-1]))

    return BORun(
        xs=np.stack(xs), ys=np.asarray(ys), best_trace=np.asarray(best_trace),
        n_init=init_points, seed=seed, objective=objective.name, dim=dim,
        fallback_iters=fallback_iters,
    )


def regret(run: BORun, objective: Objective) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(simple, cumulative, normalized) regret traces over the full history.

    The floor is the objective's known optimum when available, otherwise the
    best observed value; the ceiling is always the worst observed value.
    """
    best = run.best_trace
    y_min = objective.optimum if objective.optimum is not None else float(run.ys.min())
    y_max = float(run.ys.max())
    if y_max == y_min:
        raise DegenerateObjectiveError(
            f"all observations equal ({y_min}); normalized regret undefined"
        )
    simple = best - y_min
    cumulative = np.cumsum(simple)
    normalized = (best - y_min) / (y_max - y_min)
    return simple, cumulative, normalized


def model_surrogate(params, config, seed: int):
    """Adapter: a pretrained model as a BO surrogate.

    Returns a closure mapping TaskBatch -> (mean, std) arrays via one forward
    pass (one latent draw when the model has a latent path), deterministic
    given ``seed``.
    """
    from .model import forward

    rng = np.random.default_rng(seed)

    def predict(task: TaskBatch):
        dist = forward(task, params, config, rng)
        return dist.mean_np, dist.std_np

    return predict
