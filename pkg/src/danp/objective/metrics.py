"""Evaluation metrics for Gaussian predictive distributions.

Likelihood metrics condition the latent on the context only and average the
K-sample log-mean-exp per point, then per output dim, so numbers are
comparable across task sizes and output dimensions.  Distributional metrics
(CRPS, calibration, coverage) use the moment-matched Gaussian of the K-sample
predictive mixture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtr, ndtri

from ..model import ModelConfig, ParamStore, PredictiveDistribution
from ..model.net import (
    _transformer_stack,
    build_mask,
    build_tokens,
    dab_encode,
    decode,
    deterministic_path,
    embed_fixed,
    latent_stats,
    token_rows,
)
from ..numerics import add, constant, gather_rows, mul
from ..tasks import TaskBatch
from .losses import gaussian_loglik

DEFAULT_LEVELS = tuple(np.round(np.arange(0.05, 0.951, 0.05), 2))
DEFAULT_CI_LEVELS = (0.5, 0.9, 0.95)


@dataclass
class MetricReport:
    context_ll: float
    target_ll: float
    crps_context: float
    crps_target: float
    rmsce: float
    mace: float
    miscal_area: float
    ci_coverage: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "context_ll": self.context_ll,
            "target_ll": self.target_ll,
            "crps_context": self.crps_context,
            "crps_target": self.crps_target,
            "rmsce": self.rmsce,
            "mace": self.mace,
            "miscal_area": self.miscal_area,
            "ci_coverage": {str(k): v for k, v in self.ci_coverage.items()},
        }


def crps_gaussian(y, mu, sigma):
    """Closed-form CRPS of a Gaussian forecast; broadcasts like numpy."""
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    z = (y - mu) / sigma
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return sigma * (z * (2.0 * ndtr(z) - 1.0) + 2.0 * pdf - 1.0 / math.sqrt(math.pi))


def calibration_metrics(preds: PredictiveDistribution, truth: np.ndarray,
                        levels=DEFAULT_LEVELS, ci_levels=DEFAULT_CI_LEVELS):
    """(rmsce, mace, miscal_area, ci_coverage) of Gaussian predictions.

    For each quantile level q, p_hat(q) is the fraction of truths at or below
    the predicted q-quantile; the three scalar errors summarize |p_hat - q|,
    and ci_coverage maps each central-interval mass to its empirical rate.
    """
    levels = np.asarray(levels, dtype=np.float64)
    if levels.ndim != 1 or levels.size == 0 or np.any(np.diff(levels) <= 0) \
            or levels[0] <= 0 or levels[-1] >= 1:
        raise ValueError("levels must be strictly increasing inside (0, 1)")
    mu = np.asarray(preds.mean_np, dtype=np.float64).reshape(-1)
    sigma = np.asarray(preds.std_np, dtype=np.float64).reshape(-1)
    t = np.asarray(truth, dtype=np.float64).reshape(-1)
    if t.shape != mu.shape:
        raise ValueError(f"truth shape {truth.shape} does not match predictions")

    thresholds = mu[None, :] + sigma[None, :] * ndtri(levels)[:, None]
    p_hat = (t[None, :] <= thresholds).mean(axis=1)
    err = p_hat - levels
    rmsce = float(np.sqrt(np.mean(err * err)))
    mace = float(np.mean(np.abs(err)))
    qs = np.concatenate([[0.0], levels, [1.0]])
    gaps = np.concatenate([[0.0], np.abs(err), [0.0]])
    miscal_area = float(np.trapezoid(gaps, qs))

    ci_coverage = {}
    for alpha in ci_levels:
        half = ndtri(0.5 + alpha / 2.0)
        ci_coverage[float(alpha)] = float(np.mean(np.abs(t - mu) <= half * sigma))
    return rmsce, mace, miscal_area, ci_coverage


def predictive_samples(task: TaskBatch, params: ParamStore, config: ModelConfig,
                       K: int, rng: np.random.Generator) -> list[PredictiveDistribution]:
    """K predictive distributions conditioned on the context only (one per
    latent draw); a single-element list for deterministic configs."""
    ctx = task.context_indices
    if config.enable_dab:
        x_hat, y_tilde = dab_encode(task, params, config, mask_target_labels=True)
        mask = build_mask(task.n, task.d_y, ctx, config.target_self_attend)
        r_det = deterministic_path(x_hat, y_tilde, mask, params, config)
        d_y_tokens = task.d_y
        tokens = build_tokens(x_hat, y_tilde) if config.enable_latent else None
    else:
        tokens = embed_fixed(task, params, config, mask_target_labels=True)
        mask = build_mask(task.n, 1, ctx, config.target_self_attend)
        r_det = _transformer_stack(tokens, mask, params, "det",
                                   config.det_layers, config.det_heads)
        d_y_tokens = 1

    if not config.enable_latent:
        return [decode(r_det, None, params, config, task.n, task.d_y)]

    # Context rows carry true labels under either padding mode.
    tokens_ctx = gather_rows(tokens, token_rows(ctx, d_y_tokens))
    m, s, s2 = latent_stats(tokens_ctx, params, config)
    dists = []
    for _ in range(K):
        eps = rng.standard_normal(config.lat_hidden).astype(m.data.dtype)
        r_lat = add(m, mul(s, eps))
        dists.append(decode(r_det, r_lat, params, config, task.n, task.d_y,
                            latent_stats_pair=(m, s2)))
    return dists


def _lme_loglik(dists: list[PredictiveDistribution], y: np.ndarray,
                rows: np.ndarray) -> float:
    """Per-point log-mean-exp over samples of the joint-over-dims density,
    averaged over the given points and divided by d_y."""
    d_y = y.shape[1]
    per_sample = np.stack([
        gaussian_loglik(y[rows], d.mean_np[rows], d.std_np[rows]).sum(axis=1)
        for d in dists
    ])  # [K, |rows|]
    lme = logsumexp(per_sample, axis=0) - math.log(len(dists))
    return float(lme.mean() / d_y)


def normalized_loglik(task: TaskBatch, params: ParamStore, config: ModelConfig,
                      K: int, rng: np.random.Generator, which: str = "target") -> float:
    """K-sample normalized predictive log-likelihood, context-conditioned."""
    if which not in ("context", "target"):
        raise ValueError(f"which must be 'context' or 'target', got {which!r}")
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    rows = task.context_indices if which == "context" else task.target_indices
    dists = predictive_samples(task, params, config, K, rng)
    return _lme_loglik(dists, task.y, rows)


def mixture_moments(dists: list[PredictiveDistribution]) -> PredictiveDistribution:
    """Moment-matched Gaussian of an equal-weight mixture of Gaussians."""
    mus = np.stack([d.mean_np for d in dists]).astype(np.float64)
    sds = np.stack([d.std_np for d in dists]).astype(np.float64)
    mu = mus.mean(axis=0)
    var = np.maximum((sds ** 2 + mus ** 2).mean(axis=0) - mu ** 2, 1e-12)
    return PredictiveDistribution(mean=constant(mu.astype(np.float32)),
                                  std=constant(np.sqrt(var).astype(np.float32)))


def evaluate_task(task: TaskBatch, params: ParamStore, config: ModelConfig,
                  K: int, rng: np.random.Generator,
                  levels=DEFAULT_LEVELS, ci_levels=DEFAULT_CI_LEVELS) -> MetricReport:
    """All metrics for one task from a single set of K context-conditioned
    predictive samples."""
    dists = predictive_samples(task, params, config, K, rng)
    ctx, tgt = task.context_indices, task.target_indices
    context_ll = _lme_loglik(dists, task.y, ctx)
    target_ll = _lme_loglik(dists, task.y, tgt)

    marginal = mixture_moments(dists)
    mu, sd = marginal.mean_np, marginal.std_np
    crps_all = crps_gaussian(task.y, mu, sd)
    crps_context = float(crps_all[ctx].mean())
    crps_target = float(crps_all[tgt].mean())

    target_marginal = PredictiveDistribution(mean=constant(mu[tgt]), std=constant(sd[tgt]))
    rmsce, mace, miscal_area, ci_coverage = calibration_metrics(
        target_marginal, task.y[tgt], levels=levels, ci_levels=ci_levels)
    return MetricReport(
        context_ll=context_ll,
        target_ll=target_ll,
        crps_context=crps_context,
        crps_target=crps_target,
        rmsce=rmsce,
        mace=mace,
        miscal_area=miscal_area,
        ci_coverage=ci_coverage,
    )


def aggregate_reports(reports: list[MetricReport]) -> dict:
    """Mean and std over tasks for every scalar field plus each CI level."""
    if not reports:
        raise ValueError("no reports to aggregate")
    out = {}
    for name in ("context_ll", "target_ll", "crps_context", "crps_target",
                 "rmsce", "mace", "miscal_area"):
        vals = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        out[name] = {"mean": float(vals.mean()), "std": float(vals.std())}
    levels = reports[0].ci_coverage.keys()
    out["ci_coverage"] = {
        str(lvl): {
            "mean": float(np.mean([r.ci_coverage[lvl] for r in reports])),
            "std": float(np.std([r.ci_coverage[lvl] for r in reports])),
        }
        for lvl in levels
    }
    return out
