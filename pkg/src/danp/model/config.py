"""Model hyperparameters.  Defaults are the full-scale configuration; tests
and desk experiments shrink d_r / layers / hiddens."""

from __future__ import annotations

from dataclasses import asdict, dataclass

POSITIONAL_ENCODINGS = ("sinusoidal", "none")
POOLINGS = ("mean", "pma")

# Heads for the per-point aggregator's self-attention (width d_r, d_r is
# even by contract) and for the latent path's self-attention (width 2*d_r).
DAB_HEADS = 2
LATENT_HEADS = 4

# Depth of the fixed-dimension embedding MLP used when enable_dab is off.
EMBED_LAYERS = 4


@dataclass(frozen=True)
class ModelConfig:
    d_r: int = 32
    enable_dab: bool = True
    enable_latent: bool = True
    positional_encoding: str = "sinusoidal"
    pooling: str = "mean"
    target_self_attend: bool = False
    det_hidden: int = 128
    det_layers: int = 6
    det_heads: int = 4
    lat_hidden: int = 64
    lat_layers: int = 2
    lat_mlp_hidden: int = 128
    lat_mlp_layers: int = 2
    decoder_depth: int = 2
    min_std: float = 0.1
    fixed_dims: tuple | None = None

    def __post_init__(self):
        if self.d_r <= 0 or self.d_r % 2 != 0:
            raise ValueError(f"d_r must be a positive even integer, got {self.d_r}")
        if self.positional_encoding not in POSITIONAL_ENCODINGS:
            raise ValueError(f"positional_encoding must be one of {POSITIONAL_ENCODINGS}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")
        if self.token_width % self.det_heads != 0:
            raise ValueError(
                f"token width {self.token_width} not divisible by det_heads {self.det_heads}"
            )
        if self.min_std <= 0:
            raise ValueError(f"min_std must be positive, got {self.min_std}")
        if self.decoder_depth < 1 or self.lat_mlp_layers < 1:
            raise ValueError("decoder_depth and lat_mlp_layers must be >= 1")
        if self.det_layers < 1 or self.lat_layers < 1:
            raise ValueError("det_layers and lat_layers must be >= 1")
        if not self.enable_dab:
            if self.fixed_dims is None:
                raise ValueError("enable_dab=False requires fixed_dims=(d_x, d_y)")
            object.__setattr__(self, "fixed_dims", tuple(int(v) for v in self.fixed_dims))
            dx, dy = self.fixed_dims
            if dx < 1 or dy < 1:
                raise ValueError(f"fixed_dims must be positive, got {self.fixed_dims}")
        elif self.fixed_dims is not None:
            raise ValueError("fixed_dims only applies when enable_dab=False")

    @property
    def token_width(self) -> int:
        return 2 * self.d_r

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["fixed_dims"] is not None:
            d["fixed_dims"] = list(d["fixed_dims"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config fields: {sorted(unknown)}")
        d = dict(d)
        if d.get("fixed_dims") is not None:
            d["fixed_dims"] = tuple(d["fixed_dims"])
        return cls(**d)
