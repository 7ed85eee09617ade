"""numpy-backed tape autodiff, attention, Adam, and gradient checking."""

from .attention import AttentionWeights, IsolatedQueryError, check_mask, multihead_attention
from .gradcheck import finite_diff_check
from .optim import OptimizerState, adam_step, cosine_lr, init_optimizer
from .tensor import (
    DEFAULT_DTYPE,
    LAYERNORM_EPS,
    MASK_FILL,
    DimensionError,
    GradientError,
    NonFiniteError,
    Tape,
    Tensor,
    add,
    assert_finite,
    backward,
    concat,
    constant,
    div,
    exp,
    gather_rows,
    gelu,
    layer_norm,
    log,
    matmul,
    mean,
    mul,
    narrow,
    neg,
    param,
    permute,
    relu,
    reshape,
    scale_outer,
    set_validation,
    softmax_rows,
    softplus,
    sqrt,
    sub,
    sum_,
    tile_rows,
    transpose_last,
    zero_grads,
)

__all__ = [
    "AttentionWeights", "IsolatedQueryError", "check_mask", "multihead_attention",
    "finite_diff_check",
    "OptimizerState", "adam_step", "cosine_lr", "init_optimizer",
    "DEFAULT_DTYPE", "LAYERNORM_EPS", "MASK_FILL",
    "DimensionError", "GradientError", "NonFiniteError",
    "Tape", "Tensor", "add", "assert_finite", "backward", "concat", "constant",
    "div", "exp", "gather_rows", "gelu", "layer_norm", "log", "matmul", "mean",
    "mul", "narrow", "neg", "param", "permute", "relu", "reshape", "scale_outer",
    "set_validation", "softmax_rows", "softplus", "sqrt", "sub", "sum_",
    "tile_rows", "transpose_last", "zero_grads",
]
