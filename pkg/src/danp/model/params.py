"""Named parameter store.

Keys are dotted paths ("det.l3.attn.wq").  The key set is a pure function of
the model config, never of task dimensions, and initialization draws values
in a fixed construction order so one seed yields one parameter vector.
Everything under the "decoder." prefix forms the decoder group; the rest is
the encoder group, which is what fine-tuning can freeze.
"""

from __future__ import annotations

import math

import numpy as np

from ..numerics import AttentionWeights, Tensor, param
from ..tasks import STREAM_INIT, derive_seed
from .config import EMBED_LAYERS, ModelConfig

DECODER_PREFIX = "decoder."


class ParamStore:
    def __init__(self, tensors: dict[str, Tensor]):
        self._tensors = dict(tensors)

    def __getitem__(self, key: str) -> Tensor:
        return self._tensors[key]

    def __contains__(self, key: str) -> bool:
        return key in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def keys(self):
        return self._tensors.keys()

    def values(self):
        return self._tensors.values()

    def items(self):
        return self._tensors.items()

    def as_dict(self) -> dict[str, Tensor]:
        return dict(self._tensors)

    @property
    def decoder_keys(self) -> list[str]:
        return [k for k in self._tensors if k.startswith(DECODER_PREFIX)]

    @property
    def encoder_keys(self) -> list[str]:
        return [k for k in self._tensors if not k.startswith(DECODER_PREFIX)]

    def total_parameters(self) -> int:
        return sum(t.data.size for t in self._tensors.values())

    def copy(self) -> "ParamStore":
        return ParamStore({k: param(t.data.copy()) for k, t in self._tensors.items()})

    def astype(self, dtype) -> "ParamStore":
        return ParamStore({k: param(t.data.astype(dtype)) for k, t in self._tensors.items()})

    def attention(self, prefix: str) -> AttentionWeights:
        t = self._tensors
        return AttentionWeights(
            wq=t[f"{prefix}.wq"], wk=t[f"{prefix}.wk"], wv=t[f"{prefix}.wv"], wo=t[f"{prefix}.wo"],
            bq=t[f"{prefix}.bq"], bk=t[f"{prefix}.bk"], bv=t[f"{prefix}.bv"], bo=t[f"{prefix}.bo"],
        )


class _Builder:
    def __init__(self, rng: np.random.Generator, dtype):
        self.rng = rng
        self.dtype = dtype
        self.tensors: dict[str, Tensor] = {}

    def uniform(self, key: str, shape: tuple, bound: float) -> None:
        data = self.rng.uniform(-bound, bound, size=shape).astype(self.dtype)
        self.tensors[key] = param(data)

    def linear(self, key: str, fan_in: int, fan_out: int) -> None:
        bound = 1.0 / math.sqrt(fan_in)
        self.uniform(f"{key}.w", (fan_in, fan_out), bound)
        self.uniform(f"{key}.b", (fan_out,), bound)

    def attention(self, key: str, width: int) -> None:
        bound = 1.0 / math.sqrt(width)
        for name in ("wq", "wk", "wv", "wo"):
            self.uniform(f"{key}.{name}", (width, width), bound)
        for name in ("bq", "bk", "bv", "bo"):
            self.uniform(f"{key}.{name}", (width,), bound)

    def layer_norm(self, key: str, width: int) -> None:
        self.tensors[f"{key}.gain"] = param(np.ones(width, dtype=self.dtype))
        self.tensors[f"{key}.bias"] = param(np.zeros(width, dtype=self.dtype))

    def transformer_layer(self, key: str, width: int, ffn_hidden: int) -> None:
        self.layer_norm(f"{key}.ln1", width)
        self.attention(f"{key}.attn", width)
        self.layer_norm(f"{key}.ln2", width)
        self.linear(f"{key}.ffn.l0", width, ffn_hidden)
        self.linear(f"{key}.ffn.l1", ffn_hidden, width)

    def mlp(self, key: str, dims: list[int]) -> None:
        for j in range(len(dims) - 1):
            self.linear(f"{key}.l{j}", dims[j], dims[j + 1])


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> ParamStore:
    """Fresh parameters for ``config`` from the init stream of ``seed``."""
    rng = np.random.default_rng(derive_seed(seed, STREAM_INIT))
    b = _Builder(rng, np.dtype(dtype))
    width = config.token_width

    if config.enable_dab:
        b.uniform("dab.proj.w", (config.d_r,), 1.0)
        b.attention("dab.attn", config.d_r)
        if config.pooling == "pma":
            b.uniform("dab.pool.seed", (config.d_r,), 1.0 / math.sqrt(config.d_r))
            b.attention("dab.pool.attn", config.d_r)
    else:
        dx, dy = config.fixed_dims
        dims = [dx + dy] + [width] * EMBED_LAYERS
        b.mlp("emb", dims)

    for i in range(config.det_layers):
        b.transformer_layer(f"det.l{i}", width, config.det_hidden)
    b.layer_norm("det.norm", width)

    if config.enable_latent:
        for i in range(config.lat_layers):
            b.transformer_layer(f"lat.l{i}", width, config.lat_hidden)
        b.layer_norm("lat.norm", width)
        b.attention("lat.attn", width)
        mlp_dims = [width] + [config.lat_mlp_hidden] * (config.lat_mlp_layers - 1) \
            + [2 * config.lat_hidden]
        b.mlp("lat.mlp", mlp_dims)

    dec_in = width + (config.lat_hidden if config.enable_latent else 0)
    dec_out = 2 if config.enable_dab else 2 * config.fixed_dims[1]
    dec_dims = [dec_in] + [config.det_hidden] * (config.decoder_depth - 1) + [dec_out]
    b.mlp("decoder", dec_dims)

    return ParamStore(b.tensors)
