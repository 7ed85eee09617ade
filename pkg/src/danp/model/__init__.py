"""Model configuration, parameters, and the forward pass."""

from .config import DAB_HEADS, EMBED_LAYERS, LATENT_HEADS, ModelConfig
from .net import (
    LATENT_STD_FLOOR,
    PredictiveDistribution,
    build_mask,
    build_tokens,
    dab_encode,
    decode,
    deterministic_path,
    embed_fixed,
    forward,
    latent_path,
    latent_stats,
    pma_pool,
    positional_encoding,
    token_rows,
)
from .params import DECODER_PREFIX, ParamStore, init_params

__all__ = [
    "DAB_HEADS", "EMBED_LAYERS", "LATENT_HEADS", "ModelConfig",
    "LATENT_STD_FLOOR", "PredictiveDistribution", "build_mask", "build_tokens",
    "dab_encode", "decode", "deterministic_path", "embed_fixed", "forward",
    "latent_path", "latent_stats", "pma_pool", "positional_encoding", "token_rows",
    "DECODER_PREFIX", "ParamStore", "init_params",
]
