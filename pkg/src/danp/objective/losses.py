"""Gaussian likelihood, diagonal-Gaussian KL, and the ELBO training loss."""

from __future__ import annotations

import math

import numpy as np

from ..model import ModelConfig, ParamStore
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
from ..numerics import Tensor, add, div, gather_rows, log, mul, neg, sub, sum_
from ..tasks import TaskBatch

LOG_2PI = math.log(2.0 * math.pi)


def gaussian_loglik(y, mu, sigma):
    """Pointwise log N(y | mu, sigma^2); broadcasts like numpy."""
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("gaussian_loglik requires sigma > 0")
    z = (y - mu) / sigma
    return -np.log(sigma) - 0.5 * LOG_2PI - 0.5 * z * z


def kl_diag_gaussians(m1, s1_sq, m2, s2_sq) -> float:
    """KL(N(m1, diag s1_sq) || N(m2, diag s2_sq)), summed over dims."""
    m1 = np.asarray(m1, dtype=np.float64)
    m2 = np.asarray(m2, dtype=np.float64)
    s1_sq = np.asarray(s1_sq, dtype=np.float64)
    s2_sq = np.asarray(s2_sq, dtype=np.float64)
    if np.any(s1_sq <= 0) or np.any(s2_sq <= 0):
        raise ValueError("kl_diag_gaussians requires positive variances")
    term = np.log(s2_sq / s1_sq) + (s1_sq + (m1 - m2) ** 2) / s2_sq - 1.0
    return float(0.5 * term.sum())


def _loglik_tensor(y: np.ndarray, mu: Tensor, std: Tensor) -> Tensor:
    """Taped pointwise log-likelihood; y is a constant array shaped like mu."""
    diff = sub(mu, y.astype(mu.data.dtype))
    quad = div(mul(diff, diff), mul(mul(std, std), 2.0))
    return sub(sub(neg(log(std)), quad), 0.5 * LOG_2PI)


def _kl_tensor(m1: Tensor, s1_sq: Tensor, m2: Tensor, s2_sq: Tensor) -> Tensor:
    dm = sub(m1, m2)
    ratio = div(add(s1_sq, mul(dm, dm)), s2_sq)
    logterm = sub(log(s2_sq), log(s1_sq))
    per_dim = sub(add(logterm, ratio), 1.0)
    return mul(sum_(per_dim), 0.5)


def elbo_loss(task: TaskBatch, params: ParamStore, config: ModelConfig,
              rng: np.random.Generator, n_latent_samples: int = 1) -> Tensor:
    """Negative per-point evidence lower bound (scalar Tensor, tape-recorded).

    Latent models: loss = -[ sum_k E_q(r|D)[log N_k] - KL(q(r|D) || q(r|D_c)) ] / n
    with the expectation over ``n_latent_samples`` reparameterized draws from
    the full-set conditional (true labels everywhere).  Without a latent the
    loss is the plain negative mean log-likelihood over all n * d_y outputs.
    """
    n, d_y = task.n, task.d_y
    ctx = task.context_indices

    if config.enable_dab:
        x_hat, y_tilde = dab_encode(task, params, config, mask_target_labels=True)
        mask = build_mask(n, d_y, ctx, config.target_self_attend)
        r_det = deterministic_path(x_hat, y_tilde, mask, params, config)
        d_y_tokens = d_y
        if config.enable_latent:
            x_full, y_full = dab_encode(task, params, config, mask_target_labels=False)
            tokens_full = build_tokens(x_full, y_full)
    else:
        tokens_pad = embed_fixed(task, params, config, mask_target_labels=True)
        mask = build_mask(n, 1, ctx, config.target_self_attend)
        r_det = _transformer_stack(tokens_pad, mask, params, "det",
                                   config.det_layers, config.det_heads)
        d_y_tokens = 1
        if config.enable_latent:
            tokens_full = embed_fixed(task, params, config, mask_target_labels=False)

    if not config.enable_latent:
        dist = decode(r_det, None, params, config, n, d_y)
        ll = _loglik_tensor(task.y, dist.mean, dist.std)
        return neg(div(sum_(ll), float(n * d_y)))

    tokens_ctx = gather_rows(tokens_full, token_rows(ctx, d_y_tokens))
    m_full, s_full, s2_full = latent_stats(tokens_full, params, config)
    m_ctx, _, s2_ctx = latent_stats(tokens_ctx, params, config)

    ll_terms = []
    for _ in range(n_latent_samples):
        eps = rng.standard_normal(config.lat_hidden).astype(m_full.data.dtype)
        r_lat = add(m_full, mul(s_full, eps))
        dist = decode(r_det, r_lat, params, config, n, d_y)
        ll_terms.append(sum_(_loglik_tensor(task.y, dist.mean, dist.std)))
    ll_mc = ll_terms[0]
    for extra in ll_terms[1:]:
        ll_mc = add(ll_mc, extra)
    ll_mc = mul(ll_mc, 1.0 / n_latent_samples)

    kl = _kl_tensor(m_full, s2_full, m_ctx, s2_ctx)
    return neg(div(sub(ll_mc, kl), float(n)))
