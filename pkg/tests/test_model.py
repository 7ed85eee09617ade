"""Encoder geometry: positional tables, masks, invariances, shape contracts."""

import math

import numpy as np
import pytest

from danp.model import ModelConfig, init_params
from danp.model.net import (
    LATENT_STD_FLOOR,
    build_mask,
    build_tokens,
    dab_encode,
    forward,
    latent_path,
    latent_stats,
    pma_pool,
    positional_encoding,
    token_rows,
    _transformer_stack,
)
from danp.numerics import DimensionError, IsolatedQueryError, constant
from danp.tasks import TaskBatch

from conftest import make_task


# ---------------------------------------------------------------------------
# positional encodings

def test_pe_first_entries():
    pex, pey = positional_encoding(3, 2, 8)
    assert pex[0, 0] == pytest.approx(math.sin(1.0), abs=1e-5)
    assert pey[0, 0] == pytest.approx(math.cos(1.0), abs=1e-5)


def test_pe_x_and_y_rows_differ_at_equal_positions():
    for d_r in (4, 8, 32):
        pex, pey = positional_encoding(5, 5, d_r)
        for j in range(5):
            assert np.max(np.abs(pex[j] - pey[j])) > 1e-3


def test_pe_rows_distinguish_positions():
    pex, _ = positional_encoding(7, 1, 16)
    for a in range(7):
        for b in range(a + 1, 7):
            assert np.max(np.abs(pex[a] - pex[b])) > 1e-4


def test_pe_rejects_odd_width():
    with pytest.raises(DimensionError):
        positional_encoding(2, 1, 7)


# ---------------------------------------------------------------------------
# DAB encoder

def test_dab_shapes():
    cfg = ModelConfig(d_r=32, det_heads=4)
    params = init_params(cfg, seed=0)
    task = make_task(seed=5, n=7, d_x=3, d_y=2, n_ctx=4)
    x_hat, y_tilde = dab_encode(task, params, cfg)
    assert x_hat.shape == (7, 32)
    assert y_tilde.shape == (7, 2, 32)


def test_dab_ignores_target_labels_when_masked(tiny_config):
    params = init_params(tiny_config, seed=1)
    task = make_task(seed=6, n=5, d_x=2, d_y=1, n_ctx=2)
    y2 = task.y.copy()
    y2[list(task.target_indices)] += 100.0
    task2 = TaskBatch(x=task.x, y=y2, context_indices=task.context_indices)
    a = dab_encode(task, params, tiny_config)
    b = dab_encode(task2, params, tiny_config)
    np.testing.assert_array_equal(a[0].data, b[0].data)
    np.testing.assert_array_equal(a[1].data, b[1].data)


def _feature_permuted(task: TaskBatch, perm) -> TaskBatch:
    return TaskBatch(x=task.x[:, perm], y=task.y, context_indices=task.context_indices)


def test_feature_permutation_invariant_without_pe():
    cfg = ModelConfig(d_r=8, det_hidden=16, det_layers=2, det_heads=2,
                      lat_hidden=4, lat_mlp_hidden=8, positional_encoding="none")
    params = init_params(cfg, seed=2)
    task = make_task(seed=7, n=6, d_x=3, d_y=1, n_ctx=3)
    base, _ = dab_encode(task, params, cfg)
    permed, _ = dab_encode(_feature_permuted(task, [2, 0, 1]), params, cfg)
    np.testing.assert_allclose(base.data, permed.data, atol=1e-5)


def test_feature_permutation_breaks_with_pe(tiny_config):
    params = init_params(tiny_config, seed=2)
    task = make_task(seed=7, n=6, d_x=3, d_y=1, n_ctx=3)
    base, _ = dab_encode(task, params, tiny_config)
    permed, _ = dab_encode(_feature_permuted(task, [2, 0, 1]), params, tiny_config)
    assert np.max(np.abs(base.data - permed.data)) > 1e-4


# ---------------------------------------------------------------------------
# token grid and mask

def test_token_rows_point_major():
    np.testing.assert_array_equal(token_rows([0, 2], 3), [0, 1, 2, 6, 7, 8])


def test_build_tokens_layout():
    n, d_y, d_r = 3, 2, 4
    x_hat = constant(np.arange(n * d_r, dtype=np.float32).reshape(n, d_r))
    y_tilde = constant(100 + np.arange(n * d_y * d_r, dtype=np.float32).reshape(n, d_y, d_r))
    tokens = build_tokens(x_hat, y_tilde)
    assert tokens.shape == (n * d_y, 2 * d_r)
    for k in range(n):
        for l in range(d_y):
            row = tokens.data[k * d_y + l]
            np.testing.assert_array_equal(row[:d_r], x_hat.data[k])
            np.testing.assert_array_equal(row[d_r:], y_tilde.data[k, l])


def test_mask_enumeration_single_output_dim():
    mask = build_mask(3, 1, [1, 2])
    expected = np.array([[0, 1, 1]] * 3, dtype=np.float32)
    np.testing.assert_array_equal(mask, expected)


def test_mask_lone_target_sees_all_context():
    mask = build_mask(4, 1, [0, 1, 3])
    np.testing.assert_array_equal(mask[2], [1, 1, 0, 1])


def test_mask_duplicates_pattern_across_output_dims():
    point = build_mask(3, 1, [1, 2])
    block = build_mask(3, 2, [1, 2])
    assert block.shape == (6, 6)
    np.testing.assert_array_equal(block, np.repeat(np.repeat(point, 2, axis=0), 2, axis=1))


def test_mask_target_self_attend_adds_diagonal():
    mask = build_mask(3, 2, [1], target_self_attend=True)
    rows = token_rows([0, 2], 2)
    for r in rows:
        assert mask[r, r] == 1.0
    base = build_mask(3, 2, [1])
    off_diag = ~np.eye(6, dtype=bool)
    np.testing.assert_array_equal(mask[off_diag], base[off_diag])


def test_mask_empty_context_is_an_error():
    with pytest.raises(IsolatedQueryError):
        build_mask(3, 1, [])


# ---------------------------------------------------------------------------
# masked transformer

def test_targets_influence_nothing_else(tiny_config):
    params = init_params(tiny_config, seed=3)
    rng = np.random.default_rng(8)
    n, d_y = 5, 1
    tokens = rng.normal(size=(n, tiny_config.token_width)).astype(np.float32)
    mask = build_mask(n, d_y, [0, 1, 4])
    base = _transformer_stack(constant(tokens), mask, params, "det",
                              tiny_config.det_layers, tiny_config.det_heads)
    bumped = tokens.copy()
    # Non-uniform bump: a constant shift would be erased by the layer norms.
    bumped[2] += rng.normal(size=tiny_config.token_width).astype(np.float32)
    out = _transformer_stack(constant(bumped), mask, params, "det",
                             tiny_config.det_layers, tiny_config.det_heads)
    others = [0, 1, 3, 4]
    np.testing.assert_allclose(out.data[others], base.data[others], atol=1e-6)
    assert np.max(np.abs(out.data[2] - base.data[2])) > 1e-3


def test_context_permutation_leaves_targets_unchanged(tiny_config):
    params = init_params(tiny_config, seed=4)
    task = make_task(seed=9, n=6, d_x=2, d_y=1, n_ctx=4)
    rng = np.random.default_rng(0)
    base = forward(task, params, tiny_config, np.random.default_rng(11))

    perm = np.array([2, 0, 3, 1])  # shuffle the 4 context points
    order = np.concatenate([perm, [4, 5]])
    permuted = TaskBatch(x=task.x[order], y=task.y[order],
                         context_indices=np.arange(4))
    out = forward(permuted, params, tiny_config, np.random.default_rng(11))
    np.testing.assert_allclose(out.mean_np[4:], base.mean_np[4:], atol=1e-5)
    np.testing.assert_allclose(out.std_np[4:], base.std_np[4:], atol=1e-5)


# ---------------------------------------------------------------------------
# latent path

def test_latent_draw_is_seed_deterministic(tiny_config):
    params = init_params(tiny_config, seed=5)
    task = make_task(seed=10, n=5, d_x=2, d_y=1, n_ctx=3)
    x_hat, y_tilde = dab_encode(task, params, tiny_config)
    runs = []
    for _ in range(2):
        m, s2, r_lat = latent_path(x_hat, y_tilde, params, tiny_config,
                                   np.random.default_rng(77))
        runs.append(r_lat.data.copy())
    np.testing.assert_array_equal(runs[0], runs[1])


def test_latent_std_strictly_positive(tiny_config):
    params = init_params(tiny_config, seed=6)
    task = make_task(seed=11, n=4, d_x=1, d_y=1, n_ctx=2)
    x_hat, y_tilde = dab_encode(task, params, tiny_config)
    tokens = build_tokens(x_hat, y_tilde)
    _, s, s2 = latent_stats(tokens, params, tiny_config)
    assert np.all(s.data >= LATENT_STD_FLOOR)
    assert np.all(s2.data > 0)


def test_latent_stats_context_permutation_invariant(tiny_config):
    params = init_params(tiny_config, seed=7)
    task = make_task(seed=12, n=5, d_x=2, d_y=2, n_ctx=5 - 1)
    x_hat, y_tilde = dab_encode(task, params, tiny_config)
    tokens = build_tokens(x_hat, y_tilde)
    m1, _, s2_1 = latent_stats(tokens, params, tiny_config)
    shuffled = constant(tokens.data[np.random.default_rng(1).permutation(tokens.shape[0])])
    m2, _, s2_2 = latent_stats(shuffled, params, tiny_config)
    np.testing.assert_allclose(m1.data, m2.data, atol=1e-5)
    np.testing.assert_allclose(s2_1.data, s2_2.data, atol=1e-5)


# ---------------------------------------------------------------------------
# predictive head and full forward

def test_std_floor_and_shapes(tiny_config):
    params = init_params(tiny_config, seed=8)
    task = make_task(seed=13, n=5, d_x=3, d_y=2, n_ctx=2)
    dist = forward(task, params, tiny_config, np.random.default_rng(0))
    assert dist.mean.shape == (5, 2) and dist.std.shape == (5, 2)
    assert np.all(dist.std_np >= tiny_config.min_std)


def test_deterministic_config_forward_is_pure(tiny_fixed_config):
    params = init_params(tiny_fixed_config, seed=9)
    task = make_task(seed=14, n=6, d_x=2, d_y=1, n_ctx=3)
    a = forward(task, params, tiny_fixed_config)
    b = forward(task, params, tiny_fixed_config)
    np.testing.assert_array_equal(a.mean_np, b.mean_np)
    np.testing.assert_array_equal(a.std_np, b.std_np)


def test_latent_forward_same_seed_bitwise(tiny_config):
    params = init_params(tiny_config, seed=10)
    task = make_task(seed=15, n=5, d_x=2, d_y=1, n_ctx=3)
    a = forward(task, params, tiny_config, np.random.default_rng(3))
    b = forward(task, params, tiny_config, np.random.default_rng(3))
    np.testing.assert_array_equal(a.mean_np, b.mean_np)
    np.testing.assert_array_equal(a.std_np, b.std_np)


def test_latent_forward_requires_rng(tiny_config):
    params = init_params(tiny_config, seed=11)
    with pytest.raises(ValueError):
        forward(make_task(), params, tiny_config)


def test_one_param_store_covers_many_dims(tiny_config):
    params = init_params(tiny_config, seed=12)
    shapes = {k: v.shape for k, v in params.items()}
    for d_x in range(1, 8):
        for d_y in (1, 3):
            task = make_task(seed=16 + d_x, n=4, d_x=d_x, d_y=d_y, n_ctx=2)
            dist = forward(task, params, tiny_config, np.random.default_rng(d_x))
            assert dist.mean.shape == (4, d_y)
    assert {k: v.shape for k, v in params.items()} == shapes


def test_fixed_mode_rejects_other_dims(tiny_fixed_config):
    params = init_params(tiny_fixed_config, seed=13)
    with pytest.raises(DimensionError):
        forward(make_task(seed=17, d_x=3, d_y=1), params, tiny_fixed_config)


# ---------------------------------------------------------------------------
# PMA pooling

def _pma_config():
    return ModelConfig(d_r=8, det_hidden=16, det_layers=2, det_heads=2,
                      lat_hidden=4, lat_mlp_hidden=8, pooling="pma")


def test_pma_single_slot_is_projected_value():
    cfg = _pma_config()
    params = init_params(cfg, seed=14)
    slot = np.random.default_rng(18).normal(size=(1, 8)).astype(np.float32)
    out = pma_pool(constant(slot), params)
    w = params.attention("dab.pool.attn")
    expected = (slot @ w.wv.data + w.bv.data) @ w.wo.data + w.bo.data
    np.testing.assert_allclose(out.data, expected[0], rtol=1e-5)


def test_pma_is_permutation_invariant():
    cfg = _pma_config()
    params = init_params(cfg, seed=15)
    slots = np.random.default_rng(19).normal(size=(6, 8)).astype(np.float32)
    a = pma_pool(constant(slots), params)
    b = pma_pool(constant(slots[::-1].copy()), params)
    assert a.shape == (8,)
    np.testing.assert_allclose(a.data, b.data, atol=1e-5)


def test_pma_pooling_runs_end_to_end():
    cfg = _pma_config()
    params = init_params(cfg, seed=16)
    task = make_task(seed=20, n=5, d_x=3, d_y=1, n_ctx=2)
    dist = forward(task, params, cfg, np.random.default_rng(0))
    assert dist.mean.shape == (5, 1)


# ---------------------------------------------------------------------------
# config and parameter store

def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_r=7)
    with pytest.raises(ValueError):
        ModelConfig(d_r=16, det_heads=5)  # 32 % 5 != 0
    with pytest.raises(ValueError):
        ModelConfig(enable_dab=False)  # needs fixed_dims
    with pytest.raises(ValueError):
        ModelConfig(fixed_dims=(2, 1))  # DAB mode forbids it
    with pytest.raises(ValueError):
        ModelConfig(min_std=0.0)
    with pytest.raises(ValueError):
        ModelConfig(positional_encoding="fourier")


def test_config_dict_round_trip(tiny_config):
    assert ModelConfig.from_dict(tiny_config.to_dict()) == tiny_config
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"d_rrr": 8})


def test_init_params_deterministic(tiny_config):
    a = init_params(tiny_config, seed=21)
    b = init_params(tiny_config, seed=21)
    c = init_params(tiny_config, seed=22)
    assert list(a.keys()) == list(b.keys()) == list(c.keys())
    for k in a.keys():
        np.testing.assert_array_equal(a[k].data, b[k].data)
    assert any(np.any(a[k].data != c[k].data) for k in a.keys())


def test_param_store_group_split(tiny_config):
    params = init_params(tiny_config, seed=23)
    dec, enc = set(params.decoder_keys), set(params.encoder_keys)
    assert dec and enc
    assert dec | enc == set(params.keys())
    assert not dec & enc
    assert all(k.startswith("decoder.") for k in dec)
    assert params.total_parameters() == sum(v.data.size for v in params.values())
