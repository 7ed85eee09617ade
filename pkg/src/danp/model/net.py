"""Dimension-agnostic neural process forward pass.

Pipeline: per-point aggregation of a varying number of feature slots into a
fixed-width code (or a fixed-dimension embedding MLP when that block is
disabled), a masked pre-norm transformer over the (point, output-dim) token
grid for the deterministic path, an unmasked transformer + pooling + MLP for
the latent path, and a per-token Gaussian decoder with a hard std floor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import (
    DimensionError,
    Tensor,
    add,
    concat,
    constant,
    exp,
    gather_rows,
    gelu,
    layer_norm,
    matmul,
    mean,
    mul,
    multihead_attention,
    narrow,
    relu,
    reshape,
    scale_outer,
    softplus,
    tile_rows,
)
from ..numerics.attention import IsolatedQueryError
from ..tasks import MalformedTaskError, TaskBatch
from .config import DAB_HEADS, EMBED_LAYERS, LATENT_HEADS, ModelConfig
from .params import ParamStore

LATENT_STD_FLOOR = 1e-3


@dataclass
class PredictiveDistribution:
    """Per-point Gaussian predictive parameters, shaped like the task's y."""

    mean: Tensor
    std: Tensor
    latent_stats: tuple[Tensor, Tensor] | None = None

    @property
    def mean_np(self) -> np.ndarray:
        return self.mean.data

    @property
    def std_np(self) -> np.ndarray:
        return self.std.data


def positional_encoding(d_x: int, d_y: int, d_r: int) -> tuple[np.ndarray, np.ndarray]:
    """Sinusoidal slot encodings; the y-slot table swaps the sin/cos roles so
    x-slots and y-slots are distinguishable at equal positions.

    Positions are 1-based.  PEX[j, 2i] = sin((j+1)/P(i)) for row j counting
    from 0, PEY[l, 2i] = cos((l+1)/P(i)), with P(i) = 10000^(2i/d_r).
    """
    if d_r % 2 != 0:
        raise DimensionError(f"d_r must be even for paired sin/cos, got {d_r}")
    i = np.arange(d_r // 2, dtype=np.float64)
    period = np.power(10000.0, 2.0 * i / d_r)

    def table(positions: np.ndarray, first, second) -> np.ndarray:
        angles = positions[:, None] / period[None, :]
        out = np.empty((positions.size, d_r), dtype=np.float32)
        out[:, 0::2] = first(angles)
        out[:, 1::2] = second(angles)
        return out

    jx = np.arange(1, d_x + 1, dtype=np.float64)
    ly = np.arange(1, d_y + 1, dtype=np.float64)
    pex = table(jx, np.sin, np.cos)
    pey = table(ly, np.cos, np.sin)
    return pex, pey


def _mlp(x: Tensor, params: ParamStore, prefix: str, n_layers: int) -> Tensor:
    """ReLU MLP over the last axis; no activation after the final layer."""
    h = x
    for j in range(n_layers):
        h = add(matmul(h, params[f"{prefix}.l{j}.w"]), params[f"{prefix}.l{j}.b"])
        if j < n_layers - 1:
            h = relu(h)
    return h


def _pma(slots: Tensor, params: ParamStore, prefix: str, heads: int) -> Tensor:
    """Learnable-seed cross-attention pooling: [..., m, d] -> [..., d]."""
    seed = params[f"{prefix}.seed"]
    d = seed.shape[0]
    if slots.ndim == 2:
        query = reshape(seed, (1, d))
        pooled = multihead_attention(query, slots, slots, heads, params.attention(f"{prefix}.attn"))
        return reshape(pooled, (d,))
    n = slots.shape[0]
    query = reshape(tile_rows(seed, n), (n, 1, d))
    pooled = multihead_attention(query, slots, slots, heads, params.attention(f"{prefix}.attn"))
    return reshape(pooled, (n, d))


def pma_pool(slots: Tensor, params: ParamStore, prefix: str = "dab.pool") -> Tensor:
    """Pool a set of m slot vectors [m, d] to one vector [d] by attending a
    learnable seed over them."""
    if slots.ndim != 2:
        raise DimensionError(f"pma_pool expects [m, d] slots, got shape {slots.shape}")
    return _pma(slots, params, prefix, DAB_HEADS)


def dab_encode(
    task: TaskBatch,
    params: ParamStore,
    config: ModelConfig,
    mask_target_labels: bool = True,
) -> tuple[Tensor, Tensor]:
    """Per-point aggregation of d_x + d_y feature slots into fixed-width codes.

    Each scalar feature becomes a slot projected by one shared learnable
    vector, slot-position encodings are added, one self-attention layer mixes
    the slots of a point, then the x-slots are pooled to x_hat [n, d_r] while
    the y-slots remain per-dim, y_tilde [n, d_y, d_r].  Target labels are
    zeroed before projection unless ``mask_target_labels`` is off (the latent
    conditional on the full set needs true labels).
    """
    if not config.enable_dab:
        raise ValueError("dab_encode called with enable_dab=False")
    n, d_x, d_y = task.n, task.d_x, task.d_y
    y = task.y
    if mask_target_labels:
        y = y.copy()
        y[task.target_indices] = 0.0
    values = constant(np.concatenate([task.x, y], axis=1))

    slots = scale_outer(values, params["dab.proj.w"])
    if config.positional_encoding == "sinusoidal":
        pex, pey = positional_encoding(d_x, d_y, config.d_r)
        slots = add(slots, np.concatenate([pex, pey], axis=0))

    slots = multihead_attention(slots, slots, slots, DAB_HEADS, params.attention("dab.attn"))

    x_slots = narrow(slots, 1, 0, d_x)
    if config.pooling == "pma":
        x_hat = _pma(x_slots, params, "dab.pool", DAB_HEADS)
    else:
        x_hat = mean(x_slots, axis=1)
    y_tilde = narrow(slots, 1, d_x, d_y)
    return x_hat, y_tilde


def build_tokens(x_hat: Tensor, y_tilde: Tensor) -> Tensor:
    """Token grid [n*d_y, 2*d_r], point-major: token (k, l) sits at row k*d_y + l."""
    n, d_y, d_r = y_tilde.shape
    x3 = reshape(x_hat, (n, 1, d_r))
    x_rep = x3 if d_y == 1 else concat([x3] * d_y, axis=1)
    z = concat([x_rep, y_tilde], axis=2)
    return reshape(z, (n * d_y, 2 * d_r))


def token_rows(point_indices: np.ndarray, d_y: int) -> np.ndarray:
    """Token-grid rows covering all output dims of the given points."""
    idx = np.asarray(point_indices, dtype=np.int64)
    return (idx[:, None] * d_y + np.arange(d_y, dtype=np.int64)).reshape(-1)


def build_mask(n: int, d_y: int, context_indices: np.ndarray,
               target_self_attend: bool = False) -> np.ndarray:
    """{0,1} attention mask over the point-major token grid.

    Token (k1, l1) may attend token (k2, l2) iff point k2 is context; targets
    are never attended (so they influence nothing but themselves), and a
    target token does not even see itself unless ``target_self_attend``.
    """
    context_indices = np.asarray(context_indices, dtype=np.int64)
    if context_indices.size == 0:
        raise IsolatedQueryError("empty context: every token row would attend to nothing")
    is_ctx = np.zeros(n, dtype=bool)
    is_ctx[context_indices] = True
    ctx_token = np.repeat(is_ctx, d_y)
    mask = np.broadcast_to(ctx_token, (n * d_y, n * d_y)).astype(np.float32).copy()
    if target_self_attend:
        tgt = ~ctx_token
        mask[np.diag_indices(n * d_y)] = np.maximum(mask.diagonal(), tgt.astype(np.float32))
    return mask


def _transformer_stack(tokens: Tensor, mask: np.ndarray | None, params: ParamStore,
                       prefix: str, n_layers: int, heads: int) -> Tensor:
    h = tokens
    for i in range(n_layers):
        base = f"{prefix}.l{i}"
        normed = layer_norm(h, params[f"{base}.ln1.gain"], params[f"{base}.ln1.bias"])
        attended = multihead_attention(normed, normed, normed, heads,
                                       params.attention(f"{base}.attn"), mask=mask)
        h = add(h, attended)
        normed = layer_norm(h, params[f"{base}.ln2.gain"], params[f"{base}.ln2.bias"])
        ff = add(matmul(normed, params[f"{base}.ffn.l0.w"]), params[f"{base}.ffn.l0.b"])
        ff = add(matmul(gelu(ff), params[f"{base}.ffn.l1.w"]), params[f"{base}.ffn.l1.b"])
        h = add(h, ff)
    return layer_norm(h, params[f"{prefix}.norm.gain"], params[f"{prefix}.norm.bias"])


def deterministic_path(x_hat: Tensor, y_tilde: Tensor, mask: np.ndarray,
                       params: ParamStore, config: ModelConfig) -> Tensor:
    """Masked transformer over the token grid; returns per-token codes
    [n*d_y, 2*d_r] aligned with the input ordering."""
    tokens = build_tokens(x_hat, y_tilde)
    return _transformer_stack(tokens, mask, params, "det", config.det_layers, config.det_heads)


def latent_stats(tokens_ctx: Tensor, params: ParamStore,
                 config: ModelConfig) -> tuple[Tensor, Tensor, Tensor]:
    """(m, s, s^2) of the latent Gaussian conditioned on the given tokens."""
    if tokens_ctx.shape[0] == 0:
        raise MalformedTaskError("latent path needs at least one conditioning token")
    h = _transformer_stack(tokens_ctx, None, params, "lat", config.lat_layers, LATENT_HEADS)
    h = multihead_attention(h, h, h, LATENT_HEADS, params.attention("lat.attn"))
    pooled = mean(h, axis=0)
    stats = _mlp(reshape(pooled, (1, config.token_width)), params, "lat.mlp",
                 config.lat_mlp_layers)
    stats = reshape(stats, (2 * config.lat_hidden,))
    m = narrow(stats, 0, 0, config.lat_hidden)
    raw = narrow(stats, 0, config.lat_hidden, config.lat_hidden)
    s = add(exp(mul(raw, 0.5)), LATENT_STD_FLOOR)
    return m, s, mul(s, s)


def latent_path(x_hat_c: Tensor, y_tilde_c: Tensor, params: ParamStore,
                config: ModelConfig, rng: np.random.Generator) -> tuple[Tensor, Tensor, Tensor]:
    """Latent Gaussian from context tokens plus one reparameterized draw.

    Returns (m, s^2, r_lat) with r_lat = m + s * eps, eps ~ N(0, I) from rng.
    """
    if not config.enable_latent:
        raise ValueError("latent_path called with enable_latent=False")
    tokens_c = build_tokens(x_hat_c, y_tilde_c)
    m, s, s2 = latent_stats(tokens_c, params, config)
    eps = rng.standard_normal(config.lat_hidden).astype(m.data.dtype)
    r_lat = add(m, mul(s, eps))
    return m, s2, r_lat


def decode(r_det: Tensor, r_lat: Tensor | None, params: ParamStore, config: ModelConfig,
           n: int, d_y: int,
           latent_stats_pair: tuple[Tensor, Tensor] | None = None) -> PredictiveDistribution:
    """Per-token Gaussian head: MLP(concat(token code, broadcast latent)) ->
    (mean, raw std), std = min_std + softplus(raw)."""
    if config.enable_latent and r_lat is None:
        raise ValueError("decode needs a latent sample when enable_latent=True")
    if not config.enable_latent and r_lat is not None:
        raise ValueError("decode got a latent sample but enable_latent=False")
    n_tokens = r_det.shape[0]
    feed = r_det if r_lat is None else concat([r_det, tile_rows(r_lat, n_tokens)], axis=1)
    out = _mlp(feed, params, "decoder", config.decoder_depth)

    if config.enable_dab:
        if n_tokens != n * d_y:
            raise DimensionError(f"{n_tokens} tokens cannot cover {n} x {d_y} outputs")
        mu = reshape(narrow(out, 1, 0, 1), (n, d_y))
        raw = reshape(narrow(out, 1, 1, 1), (n, d_y))
    else:
        if n_tokens != n:
            raise DimensionError(f"{n_tokens} tokens for {n} points in fixed mode")
        mu = narrow(out, 1, 0, d_y)
        raw = narrow(out, 1, d_y, d_y)
    std = add(softplus(raw), config.min_std)
    return PredictiveDistribution(mean=mu, std=std, latent_stats=latent_stats_pair)


def embed_fixed(task: TaskBatch, params: ParamStore, config: ModelConfig,
                mask_target_labels: bool = True) -> Tensor:
    """Fixed-dimension fallback: one token per point from an MLP over
    concat(x, y-or-zeros)."""
    dx, dy = config.fixed_dims
    if (task.d_x, task.d_y) != (dx, dy):
        raise DimensionError(
            f"task dims ({task.d_x}, {task.d_y}) do not match fixed_dims ({dx}, {dy})"
        )
    y = task.y
    if mask_target_labels:
        y = y.copy()
        y[task.target_indices] = 0.0
    feats = constant(np.concatenate([task.x, y], axis=1))
    return _mlp(feats, params, "emb", EMBED_LAYERS)


def forward(task: TaskBatch, params: ParamStore, config: ModelConfig,
            rng: np.random.Generator | None = None) -> PredictiveDistribution:
    """Full predictive pass; the latent (when enabled) conditions on context
    only, sampled once per call from ``rng``."""
    if config.enable_latent and rng is None:
        raise ValueError("forward needs an rng when enable_latent=True")
    ctx = task.context_indices

    if config.enable_dab:
        x_hat, y_tilde = dab_encode(task, params, config)
        mask = build_mask(task.n, task.d_y, ctx, config.target_self_attend)
        r_det = deterministic_path(x_hat, y_tilde, mask, params, config)
        d_y_tokens = task.d_y
        if config.enable_latent:
            x_hat_c = gather_rows(x_hat, ctx)
            y_tilde_c = gather_rows(y_tilde, ctx)
            m, s2, r_lat = latent_path(x_hat_c, y_tilde_c, params, config, rng)
    else:
        tokens = embed_fixed(task, params, config)
        mask = build_mask(task.n, 1, ctx, config.target_self_attend)
        r_det = _transformer_stack(tokens, mask, params, "det",
                                   config.det_layers, config.det_heads)
        d_y_tokens = 1
        if config.enable_latent:
            tokens_c = gather_rows(tokens, token_rows(ctx, d_y_tokens))
            m, s, s2 = latent_stats(tokens_c, params, config)
            eps = rng.standard_normal(config.lat_hidden).astype(m.data.dtype)
            r_lat = add(m, mul(s, eps))

    if config.enable_latent:
        return decode(r_det, r_lat, params, config, task.n, task.d_y,
                      latent_stats_pair=(m, s2))
    return decode(r_det, None, params, config, task.n, task.d_y)
