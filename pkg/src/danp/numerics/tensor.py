"""Minimal numpy-backed reverse-mode autodiff.

A ``Tensor`` wraps an ndarray; an explicit ``Tape`` records every
differentiable op executed inside its ``with`` block.  ``backward`` walks the
tape once in reverse and deposits gradients on leaf tensors created with
``requires_grad=True``.  Only the primitives below exist, and the only
implicit broadcasting they allow is "suffix" alignment: the right operand's
shape must equal the trailing shape of the left operand (leading batch axes
are prepended).  Everything else is a shape error up front.

float32 is the working precision; float64 is supported so gradients can be
finite-difference checked at tight tolerance.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np
from scipy import special as _sp

DEFAULT_DTYPE = np.dtype("float32")
_FLOAT_DTYPES = (np.dtype("float32"), np.dtype("float64"))

LAYERNORM_EPS = 1e-5
MASK_FILL = -1e9


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf showed up where finite values are required."""


class GradientError(RuntimeError):
    """backward() was asked to do something the tape cannot support."""


_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = []
        _state.tapes = stack
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


_validate = False


def set_validation(on: bool) -> None:
    """Globally toggle finite-value checking of every new tensor (slow)."""
    global _validate
    _validate = bool(on)


def assert_finite(arr: np.ndarray, what: str = "tensor") -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")


class Tensor:
    """An ndarray plus autodiff bookkeeping.  Treat instances as immutable;
    only optimizer steps mutate ``.data`` in place, between tapes."""

    __slots__ = ("data", "requires_grad", "grad", "is_leaf")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, (np.ndarray, np.generic)) and dtype is None:
            arr = np.asarray(data)
            if arr.dtype not in _FLOAT_DTYPES:
                arr = arr.astype(DEFAULT_DTYPE)
        else:
            arr = np.asarray(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.is_leaf = True
        if _validate:
            assert_finite(arr)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


def param(data, dtype=None) -> Tensor:
    """Leaf tensor that collects gradients."""
    return Tensor(data, requires_grad=True, dtype=dtype)


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


class Tape:
    """Op record for one forward pass.  Entries are (out, inputs, vjp) where
    vjp maps the output cotangent to one cotangent per input tensor."""

    __slots__ = ("ops",)

    def __init__(self):
        self.ops: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        top = _tape_stack().pop()
        if top is not self:
            raise GradientError("tape stack corrupted: exited a tape that is not on top")
        return False

    def __len__(self) -> int:
        return len(self.ops)


def _record(out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        tape.ops.append((out, inputs, vjp))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(leaf) into each leaf's ``.grad``.

    ``loss`` must be a scalar produced on ``tape``.  Intermediate cotangents
    are freed as soon as their producing op is processed.
    """
    if loss.data.shape != ():
        raise GradientError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise GradientError("loss does not depend on any tensor with requires_grad=True")
    cotangents: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
    for out, inputs, vjp in reversed(tape.ops):
        g = cotangents.pop(id(out), None)
        if g is None:
            continue
        for t, gt in zip(inputs, vjp(g)):
            if gt is None or not t.requires_grad:
                continue
            if t.is_leaf:
                t.grad = gt.copy() if t.grad is None else t.grad + gt
            else:
                key = id(t)
                held = cotangents.get(key)
                cotangents[key] = gt if held is None else held + gt


def zero_grads(tensors) -> None:
    for t in tensors.values() if isinstance(tensors, dict) else tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# shape plumbing

def _suffix_compatible(big: tuple, small: tuple) -> bool:
    if len(small) > len(big):
        return False
    return big[len(big) - len(small):] == small


def _reduce_suffix(g: np.ndarray, shape: tuple) -> np.ndarray:
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    return g


def _binary_operands(a: Tensor, b, op_name: str):
    """Returns (b_array, b_tensor_or_None) with suffix-shape checking."""
    if isinstance(b, Tensor):
        if not _suffix_compatible(a.data.shape, b.data.shape):
            raise DimensionError(
                f"{op_name}: right shape {b.data.shape} is not a suffix of left shape {a.data.shape}"
            )
        return b.data, b
    if isinstance(b, (int, float)):
        return b, None
    arr = np.asarray(b, dtype=a.data.dtype)
    if not _suffix_compatible(a.data.shape, arr.shape):
        raise DimensionError(
            f"{op_name}: constant shape {arr.shape} is not a suffix of left shape {a.data.shape}"
        )
    return arr, None


# ---------------------------------------------------------------------------
# arithmetic primitives

def add(a: Tensor, b) -> Tensor:
    bd, bt = _binary_operands(a, b, "add")
    out = Tensor(a.data + bd)
    ins = (a,) if bt is None else (a, bt)

    def vjp(g):
        if bt is None:
            return (g,)
        return g, _reduce_suffix(g, bt.data.shape)

    return _record(out, ins, vjp)


def sub(a: Tensor, b) -> Tensor:
    bd, bt = _binary_operands(a, b, "sub")
    out = Tensor(a.data - bd)
    ins = (a,) if bt is None else (a, bt)

    def vjp(g):
        if bt is None:
            return (g,)
        return g, -_reduce_suffix(g, bt.data.shape)

    return _record(out, ins, vjp)


def mul(a: Tensor, b) -> Tensor:
    bd, bt = _binary_operands(a, b, "mul")
    out = Tensor(a.data * bd)
    ins = (a,) if bt is None else (a, bt)
    a_data = a.data

    def vjp(g):
        if bt is None:
            return (g * bd,)
        return g * bd, _reduce_suffix(g * a_data, bt.data.shape)

    return _record(out, ins, vjp)


def div(a: Tensor, b) -> Tensor:
    bd, bt = _binary_operands(a, b, "div")
    out_data = a.data / bd
    out = Tensor(out_data)
    ins = (a,) if bt is None else (a, bt)

    def vjp(g):
        if bt is None:
            return (g / bd,)
        return g / bd, _reduce_suffix(-g * out_data / bd, bt.data.shape)

    return _record(out, ins, vjp)


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# elementwise nonlinearities

def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    out = Tensor(out_data)
    return _record(out, (a,), lambda g: (g * out_data,))


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    a_data = a.data
    return _record(out, (a,), lambda g: (g / a_data,))


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)
    out = Tensor(out_data)
    return _record(out, (a,), lambda g: (g * (0.5 / out_data),))


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))
    a_data = a.data
    return _record(out, (a,), lambda g: (g * (a_data > 0),))


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-error-linear unit, x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + _sp.erf(x / np.sqrt(2.0, dtype=x.dtype)))
    out = Tensor(x * cdf)

    def vjp(g):
        pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
        return (g * (cdf + x * pdf.astype(x.dtype)),)

    return _record(out, (a,), vjp)


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = Tensor(np.logaddexp(np.zeros((), dtype=x.dtype), x))

    def vjp(g):
        return (g * _sp.expit(x),)

    return _record(out, (a,), vjp)


# ---------------------------------------------------------------------------
# reductions

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    shape = a.data.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(out, (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    shape = a.data.shape
    count = a.data.size if axis is None else shape[axis]

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, shape).astype(g.dtype, copy=True),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _record(out, (a,), vjp)


# ---------------------------------------------------------------------------
# structural primitives

def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(old),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"permute: axes {axes} is not a permutation for ndim {a.ndim}")
    inv = tuple(np.argsort(axes))
    out = Tensor(np.transpose(a.data, axes))
    return _record(out, (a,), lambda g: (np.transpose(g, inv),))


def transpose_last(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise DimensionError(f"transpose_last needs ndim >= 2, got shape {a.data.shape}")
    axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    return permute(a, axes)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise DimensionError("concat of zero tensors")
    datas = [p.data for p in parts]
    out = Tensor(np.concatenate(datas, axis=axis))
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _record(out, tuple(parts), vjp)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    n = a.data.shape[axis]
    if start < 0 or length < 0 or start + length > n:
        raise DimensionError(
            f"narrow: [{start}:{start + length}] out of range for axis {axis} of shape {a.data.shape}"
        )
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    shape = a.data.shape
    out = Tensor(a.data[sl])

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[sl] = g
        return (full,)

    return _record(out, (a,), vjp)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows along axis 0; duplicate indices accumulate in the vjp."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError(f"gather_rows: index must be 1-D, got shape {idx.shape}")
    shape = a.data.shape
    out = Tensor(a.data[idx])

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _record(out, (a,), vjp)


def tile_rows(v: Tensor, n: int) -> Tensor:
    """[d] -> [n, d] by repetition."""
    if v.ndim != 1:
        raise DimensionError(f"tile_rows expects a vector, got shape {v.data.shape}")
    out = Tensor(np.broadcast_to(v.data, (n,) + v.data.shape).copy())
    return _record(out, (v,), lambda g: (g.sum(axis=0),))


def scale_outer(values: Tensor, w: Tensor) -> Tensor:
    """out[..., i] = values[...] * w[i]; the outer product with a weight vector."""
    if w.ndim != 1:
        raise DimensionError(f"scale_outer weight must be a vector, got shape {w.data.shape}")
    v_data, w_data = values.data, w.data
    out = Tensor(v_data[..., None] * w_data)

    def vjp(g):
        dv = (g * w_data).sum(axis=-1)
        dw = g.reshape(-1, w_data.shape[0]).T @ v_data.reshape(-1)
        return dv, dw

    return _record(out, (values, w), vjp)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D x 2-D, batched x batched (equal leading dims), or batched x 2-D."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise DimensionError(f"matmul needs ndim >= 2: {ad.shape} x {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {ad.shape} x {bd.shape}")
    if ad.ndim > 2 and bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise DimensionError(f"matmul leading batch dims differ: {ad.shape} x {bd.shape}")
    out = Tensor(np.matmul(ad, bd))

    def vjp(g):
        da = _reduce_suffix(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        db = _reduce_suffix(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return da, db

    return _record(out, (a, b), vjp)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis, max-subtracted for stability."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - dot) * y,)

    return _record(out, (x,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise DimensionError(
            f"layer_norm: gain {gain.data.shape} / bias {bias.data.shape} must be ({d},)"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.data.dtype))
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)
    g_data = gain.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        gx = g * g_data
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, dgain, dbias

    return _record(out, (x, gain, bias), vjp)
