"""Autodiff engine: op oracles, suffix broadcasting, backward contract."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from danp.numerics import (
    DimensionError,
    GradientError,
    Tape,
    Tensor,
    add,
    backward,
    concat,
    constant,
    div,
    exp,
    finite_diff_check,
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
    softmax_rows,
    softplus,
    sqrt,
    sub,
    sum_,
    tile_rows,
    transpose_last,
    zero_grads,
)

F64 = np.float64


def grad_of(build, *arrays_):
    """Run build(*params) under a tape and return the leaf gradients."""
    params = [param(a, dtype=F64) for a in arrays_]
    with Tape() as tape:
        loss = build(*params)
    backward(loss, tape)
    return [p.grad for p in params]


# ---------------------------------------------------------------------------
# forward oracles

def test_matmul_identity():
    a = constant(np.eye(2))
    b = constant(np.array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(matmul(a, b).data, b.data)


def test_matmul_hand_example():
    a = constant(np.array([[1.0, 2.0], [3.0, 4.0]]))
    b = constant(np.array([[5.0], [6.0]]))
    np.testing.assert_allclose(matmul(a, b).data, [[17.0], [39.0]])


def test_matmul_shape_error():
    with pytest.raises(DimensionError):
        matmul(constant(np.zeros((2, 3))), constant(np.zeros((4, 5))))


def test_matmul_batch_leading_dims_must_match():
    with pytest.raises(DimensionError):
        matmul(constant(np.zeros((2, 3, 4))), constant(np.zeros((5, 4, 3))))


def test_softmax_symmetry():
    np.testing.assert_allclose(softmax_rows(constant([0.0, 0.0])).data, [0.5, 0.5])


def test_softmax_values():
    out = softmax_rows(constant(np.array([1.0, 2.0, 3.0], dtype=F64)))
    np.testing.assert_allclose(out.data, [0.09003057, 0.24472847, 0.66524096], atol=1e-6)


def test_softmax_large_inputs_no_overflow():
    out = softmax_rows(constant([1000.0, 1000.0]))
    assert np.all(np.isfinite(out.data))
    np.testing.assert_allclose(out.data, [0.5, 0.5])


@given(arrays(F64, array_shapes(min_dims=1, max_dims=3, max_side=5),
              elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    rows = softmax_rows(constant(x)).data.sum(axis=-1)
    np.testing.assert_allclose(rows, np.ones_like(rows), atol=1e-6)


def test_layer_norm_constant_row_is_zero():
    x = constant(np.full((3, 4), 2.5))
    out = layer_norm(x, constant(np.ones(4)), constant(np.zeros(4)))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-4)


def test_layer_norm_two_point_row():
    out = layer_norm(constant(np.array([[1.0, -1.0]], dtype=F64)),
                     constant(np.ones(2, dtype=F64)), constant(np.zeros(2, dtype=F64)))
    expected = 1.0 / math.sqrt(1.0 + 1e-5)
    np.testing.assert_allclose(out.data, [[expected, -expected]], rtol=1e-6)


def test_layer_norm_zero_gain_gives_bias():
    x = constant(np.random.default_rng(0).normal(size=(5, 3)))
    bias = np.array([1.0, 2.0, 3.0], dtype=np.float32)
    out = layer_norm(x, constant(np.zeros(3)), constant(bias))
    np.testing.assert_allclose(out.data, np.broadcast_to(bias, (5, 3)))


def test_layer_norm_rejects_wrong_gain_shape():
    with pytest.raises(DimensionError):
        layer_norm(constant(np.zeros((2, 4))), constant(np.zeros(3)), constant(np.zeros(4)))


def test_scalar_result_keeps_float64():
    # Reductions hand numpy scalars to Tensor; the dtype must survive.
    assert sum_(constant(np.ones(3, dtype=F64))).dtype == F64
    assert mean(constant(np.ones(3, dtype=F64))).dtype == F64
    assert sum_(constant(np.ones(3, dtype=np.float32))).dtype == np.float32


def test_tensor_casts_non_float_input():
    assert Tensor(np.arange(3)).dtype == np.float32
    assert Tensor([1, 2, 3]).dtype == np.float32
    assert Tensor(np.ones(2, dtype=F64)).dtype == F64


# ---------------------------------------------------------------------------
# suffix broadcasting

def test_suffix_broadcast_accepts_trailing_shape():
    out = add(constant(np.zeros((3, 2))), constant(np.array([1.0, 2.0])))
    np.testing.assert_allclose(out.data, np.tile([1.0, 2.0], (3, 1)))


def test_suffix_broadcast_rejects_leading_shape():
    with pytest.raises(DimensionError):
        add(constant(np.zeros((2, 3))), constant(np.zeros(2)))


def test_suffix_broadcast_vjp_reduces_leading_axes():
    (ga, gb) = grad_of(lambda a, b: sum_(mul(a, b)),
                       np.arange(6, dtype=F64).reshape(3, 2), np.ones(2, dtype=F64))
    np.testing.assert_allclose(ga, np.ones((3, 2)))
    np.testing.assert_allclose(gb, [0 + 2 + 4, 1 + 3 + 5])


# ---------------------------------------------------------------------------
# backward contract

def test_grad_of_sum_is_ones():
    (g,) = grad_of(lambda t: sum_(t), np.random.default_rng(0).normal(size=7))
    np.testing.assert_array_equal(g, np.ones(7))


def test_grad_of_half_square_norm_is_theta():
    theta = np.random.default_rng(1).normal(size=5)
    (g,) = grad_of(lambda t: div(sum_(mul(t, t)), 2.0), theta)
    np.testing.assert_allclose(g, theta, rtol=1e-12)


def test_backward_rejects_non_scalar_loss():
    p = param(np.ones(3))
    with Tape() as tape:
        out = mul(p, 2.0)
    with pytest.raises(GradientError):
        backward(out, tape)


def test_backward_rejects_disconnected_loss():
    with Tape() as tape:
        loss = sum_(constant(np.ones(3)))
    with pytest.raises(GradientError):
        backward(loss, tape)


def test_grads_accumulate_across_backwards():
    p = param(np.ones(3, dtype=F64))
    for _ in range(2):
        with Tape() as tape:
            loss = sum_(p)
        backward(loss, tape)
    np.testing.assert_array_equal(p.grad, 2 * np.ones(3))
    zero_grads([p])
    assert p.grad is None


def test_reused_tensor_fans_in_gradient():
    (g,) = grad_of(lambda t: sum_(add(mul(t, 3.0), t)), np.ones(4, dtype=F64))
    np.testing.assert_allclose(g, 4 * np.ones(4))


def test_gather_rows_duplicates_accumulate():
    (g,) = grad_of(lambda t: sum_(gather_rows(t, [0, 0, 2])),
                   np.zeros((3, 2), dtype=F64))
    np.testing.assert_array_equal(g, [[2, 2], [0, 0], [1, 1]])


def test_ops_outside_tape_are_not_recorded():
    p = param(np.ones(3))
    out = sum_(p)  # no active tape: result stays a leaf
    assert out.is_leaf
    with Tape() as tape:
        sum_(constant(np.ones(3)))  # no grad-requiring input: not recorded
    assert len(tape) == 0


# ---------------------------------------------------------------------------
# structural op errors

def test_narrow_out_of_range():
    with pytest.raises(DimensionError):
        narrow(constant(np.zeros((4, 3))), 1, 2, 2)


def test_permute_rejects_non_permutation():
    with pytest.raises(DimensionError):
        permute(constant(np.zeros((2, 3))), (0, 0))


def test_tile_rows_requires_vector():
    with pytest.raises(DimensionError):
        tile_rows(constant(np.zeros((2, 2))), 3)


def test_scale_outer_requires_vector_weight():
    with pytest.raises(DimensionError):
        scale_outer(constant(np.zeros((2, 2))), constant(np.zeros((2, 2))))


def test_concat_of_nothing():
    with pytest.raises(DimensionError):
        concat([])


# ---------------------------------------------------------------------------
# finite-difference oracle over composites

def test_composite_elementwise_chain_matches_fd():
    rng = np.random.default_rng(2)
    p = {"a": param(rng.uniform(0.5, 1.5, size=(3, 2)), dtype=F64),
         "b": param(rng.normal(size=2), dtype=F64)}

    def f():
        z = add(mul(p["a"], p["b"]), 0.3)
        z = softplus(z)
        z = log(add(sqrt(z), 1.0))
        z = sub(gelu(z), relu(neg(z)))
        return mean(exp(mul(z, 0.5)))

    assert finite_diff_check(f, p) <= 1e-3


def test_composite_structural_chain_matches_fd():
    rng = np.random.default_rng(3)
    p = {"m": param(rng.normal(size=(4, 3)), dtype=F64),
         "w": param(rng.normal(size=3), dtype=F64),
         "g": param(rng.uniform(0.5, 1.5, size=6), dtype=F64),
         "b": param(rng.normal(size=6), dtype=F64)}

    def f():
        big = scale_outer(p["m"], p["w"])           # [4, 3, 3]
        flat = reshape(big, (4, 9))
        left = narrow(flat, 1, 0, 6)
        rows = gather_rows(left, [0, 2, 2, 3])
        normed = layer_norm(rows, p["g"], p["b"])
        att = softmax_rows(matmul(normed, transpose_last(normed)))
        mixed = matmul(att, normed)
        stacked = concat([mixed, tile_rows(p["w"], 4)], axis=1)
        return sum_(mul(permute(stacked, (1, 0)), 0.1))

    assert finite_diff_check(f, p) <= 1e-3


@given(st.integers(0, 2 ** 32 - 1))
def test_matmul_batched_grad_matches_fd(seed):
    rng = np.random.default_rng(seed)
    p = {"a": param(rng.normal(size=(2, 3, 4)), dtype=F64),
         "b": param(rng.normal(size=(4, 2)), dtype=F64)}
    assert finite_diff_check(lambda: sum_(matmul(p["a"], p["b"])), p) <= 1e-3


def test_determinism_bitwise():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(8, 8)).astype(np.float32)

    def run():
        t = constant(x)
        return matmul(softmax_rows(t), gelu(t)).data.tobytes()

    assert run() == run()
