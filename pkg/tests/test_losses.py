"""Likelihood/KL oracles, ELBO composition, and the training loop contract."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from danp.model import ModelConfig, init_params
from danp.model.net import forward
from danp.numerics import constant
from danp.objective import (
    TrainSpec,
    TrainingAbort,
    elbo_loss,
    finetune,
    gaussian_loglik,
    kl_diag_gaussians,
    train,
)
from danp.objective.losses import _kl_tensor
from danp.tasks import TaskBatch

from conftest import make_task


# ---------------------------------------------------------------------------
# Gaussian log-likelihood

def test_loglik_at_mean_unit_sigma():
    assert gaussian_loglik(0.0, 0.0, 1.0) == pytest.approx(-0.9189385, abs=1e-6)


def test_loglik_ceiling_at_min_std():
    assert gaussian_loglik(0.0, 0.0, 0.1) == pytest.approx(1.38364, abs=1e-5)


def test_loglik_one_sigma_off_subtracts_half():
    base = gaussian_loglik(0.0, 0.0, 0.7)
    assert gaussian_loglik(0.7, 0.0, 0.7) == pytest.approx(base - 0.5, abs=1e-9)


def test_loglik_rejects_nonpositive_sigma():
    with pytest.raises(ValueError):
        gaussian_loglik(0.0, 0.0, 0.0)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.05, 3))
def test_loglik_never_exceeds_min_std_ceiling(y, mu, sigma):
    ceiling = gaussian_loglik(0.0, 0.0, min(sigma, 0.1))
    assert gaussian_loglik(y, mu, max(sigma, 0.1)) <= ceiling + 1e-12


# ---------------------------------------------------------------------------
# KL divergence

def test_kl_identical_is_zero():
    m = np.array([0.3, -1.0])
    s2 = np.array([0.5, 2.0])
    assert abs(kl_diag_gaussians(m, s2, m, s2)) <= 1e-12


def test_kl_unit_mean_shift():
    assert kl_diag_gaussians([1.0], [1.0], [0.0], [1.0]) == pytest.approx(0.5)


def test_kl_variance_ratio():
    got = kl_diag_gaussians([0.0], [2.0], [0.0], [1.0])
    assert got == pytest.approx(0.15342641, abs=1e-6)


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=4),
       st.lists(st.floats(0.1, 4), min_size=4, max_size=4),
       st.lists(st.floats(-3, 3), min_size=1, max_size=4),
       st.lists(st.floats(0.1, 4), min_size=4, max_size=4))
def test_kl_nonnegative(m1, s1, m2, s2):
    k = min(len(m1), len(m2))
    assert kl_diag_gaussians(m1[:k], s1[:k], m2[:k], s2[:k]) >= -1e-10


def test_kl_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        kl_diag_gaussians([0.0], [0.0], [0.0], [1.0])


def test_kl_tensor_identity_is_zero():
    m = constant(np.array([0.2, -0.4]), dtype=np.float64)
    s2 = constant(np.array([0.9, 1.7]), dtype=np.float64)
    assert abs(_kl_tensor(m, s2, m, s2).item()) <= 1e-12


# ---------------------------------------------------------------------------
# ELBO

def test_elbo_without_latent_is_mean_negative_loglik(tiny_fixed_config):
    params = init_params(tiny_fixed_config, seed=0)
    task = make_task(seed=1, n=6, d_x=2, d_y=1, n_ctx=3)
    loss = elbo_loss(task, params, tiny_fixed_config, np.random.default_rng(0))
    dist = forward(task, params, tiny_fixed_config)
    expected = -gaussian_loglik(task.y, dist.mean_np, dist.std_np).mean()
    assert loss.shape == ()
    assert loss.item() == pytest.approx(expected, abs=1e-6)


def test_elbo_latent_is_finite_scalar(tiny_config):
    params = init_params(tiny_config, seed=1)
    task = make_task(seed=2, n=5, d_x=2, d_y=2, n_ctx=2)
    loss = elbo_loss(task, params, tiny_config, np.random.default_rng(0),
                     n_latent_samples=3)
    assert loss.shape == ()
    assert np.isfinite(loss.item())


def test_elbo_latent_same_rng_is_deterministic(tiny_config):
    params = init_params(tiny_config, seed=2)
    task = make_task(seed=3, n=5, d_x=1, d_y=1, n_ctx=2)
    a = elbo_loss(task, params, tiny_config, np.random.default_rng(9)).item()
    b = elbo_loss(task, params, tiny_config, np.random.default_rng(9)).item()
    assert a == b


# ---------------------------------------------------------------------------
# training loop

def _smoke_spec(seed, steps=100, lr=3e-3):
    return TrainSpec(total_steps=steps, batch_size=1, base_lr=lr, seed=seed)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_loss_decreases_on_a_fixed_task(tiny_config, seed):
    task = make_task(seed=4, n=8, d_x=1, d_y=1, n_ctx=4)
    _, curve = train(lambda i: task, tiny_config, _smoke_spec(seed))
    losses = [l for _, _, l in curve]
    assert np.mean(losses[-10:]) < np.mean(losses[:10])


def test_train_same_seed_bitwise(tiny_config):
    task = make_task(seed=5, n=6, d_x=2, d_y=1, n_ctx=3)
    a, curve_a = train(lambda i: task, tiny_config, _smoke_spec(7, steps=5))
    b, curve_b = train(lambda i: task, tiny_config, _smoke_spec(7, steps=5))
    assert curve_a == curve_b
    for k in a.keys():
        np.testing.assert_array_equal(a[k].data, b[k].data)


def test_train_handles_mixed_dims(tiny_config):
    tasks = [make_task(seed=6, n=5, d_x=2, d_y=1, n_ctx=2),
             make_task(seed=7, n=5, d_x=3, d_y=1, n_ctx=2)]
    _, curve = train(lambda i: tasks[i % 2], tiny_config,
                     TrainSpec(total_steps=4, batch_size=2, base_lr=1e-3, seed=0))
    assert len(curve) == 4


def test_non_finite_loss_aborts(tiny_config):
    bad = TaskBatch(x=np.ones((4, 1)), y=np.full((4, 1), 1e30),
                    context_indices=[0, 1])
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(TrainingAbort) as info:
            train(lambda i: bad, tiny_config, _smoke_spec(0, steps=3))
    assert info.value.step == 0


def test_train_spec_validation():
    with pytest.raises(ValueError):
        TrainSpec(total_steps=0)
    with pytest.raises(ValueError):
        TrainSpec(total_steps=10, batch_size=0)
    with pytest.raises(ValueError):
        TrainSpec.from_dict({"total_steps": 10, "max_lr": 1.0})
    with pytest.raises(ValueError):
        TrainSpec(total_steps=10, warmup_steps=10)
    with pytest.raises(ValueError):
        TrainSpec(total_steps=10, clip_norm=-1.0)
    spec = TrainSpec(total_steps=10)
    assert TrainSpec.from_dict(spec.to_dict()) == spec


def test_warmup_ramps_then_cosine(tiny_config):
    task = make_task(seed=4, n=5, d_x=1, d_y=1, n_ctx=2)
    spec = TrainSpec(total_steps=6, batch_size=1, base_lr=3e-4, seed=0,
                     warmup_steps=3)
    _, curve = train(lambda i: task, tiny_config, spec)
    lrs = [lr for _, lr, _ in curve]
    b = spec.base_lr
    expect = [b / 3, 2 * b / 3, b,
              b, b * 0.5 * (1 + np.cos(np.pi / 3)), b * 0.5 * (1 + np.cos(2 * np.pi / 3))]
    np.testing.assert_allclose(lrs, expect, rtol=1e-12)


def test_zero_warmup_matches_plain_cosine(tiny_config):
    task = make_task(seed=4, n=5, d_x=1, d_y=1, n_ctx=2)
    a, curve_a = train(lambda i: task, tiny_config, _smoke_spec(3, steps=4))
    b, curve_b = train(lambda i: task, tiny_config,
                       TrainSpec(total_steps=4, batch_size=1, base_lr=3e-3,
                                 seed=3, warmup_steps=0, clip_norm=0.0))
    assert curve_a == curve_b
    for k in a.keys():
        np.testing.assert_array_equal(a[k].data, b[k].data)


def test_huge_clip_norm_is_a_no_op(tiny_config):
    task = make_task(seed=5, n=6, d_x=2, d_y=1, n_ctx=3)
    plain, curve_p = train(lambda i: task, tiny_config, _smoke_spec(7, steps=5))
    spec = TrainSpec(total_steps=5, batch_size=1, base_lr=3e-3, seed=7,
                     clip_norm=1e9)
    clipped, curve_c = train(lambda i: task, tiny_config, spec)
    assert curve_p == curve_c
    for k in plain.keys():
        np.testing.assert_array_equal(plain[k].data, clipped[k].data)


def test_tight_clip_norm_changes_updates(tiny_config):
    task = make_task(seed=5, n=6, d_x=2, d_y=1, n_ctx=3)
    plain, _ = train(lambda i: task, tiny_config, _smoke_spec(9, steps=3))
    spec = TrainSpec(total_steps=3, batch_size=1, base_lr=3e-3, seed=9,
                     clip_norm=1e-4)
    clipped, _ = train(lambda i: task, tiny_config, spec)
    moved = any(np.any(plain[k].data != clipped[k].data) for k in plain.keys())
    assert moved


# ---------------------------------------------------------------------------
# fine-tuning

def test_finetune_freeze_keeps_encoder_bitwise(tiny_config):
    pre = init_params(tiny_config, seed=8)
    tasks = [make_task(seed=9 + i, n=5, d_x=1, d_y=1, n_ctx=2) for i in range(3)]
    tuned, _ = finetune(pre, tasks, "freeze", tiny_config, _smoke_spec(0, steps=5))
    for k in pre.encoder_keys:
        np.testing.assert_array_equal(tuned[k].data, pre[k].data)
    assert any(np.any(tuned[k].data != pre[k].data) for k in pre.decoder_keys)


def test_finetune_full_moves_encoder(tiny_config):
    pre = init_params(tiny_config, seed=10)
    tasks = [make_task(seed=12, n=5, d_x=1, d_y=1, n_ctx=2)]
    tuned, _ = finetune(pre, tasks, "full", tiny_config, _smoke_spec(0, steps=2))
    assert any(np.any(tuned[k].data != pre[k].data) for k in pre.encoder_keys)


def test_finetune_does_not_mutate_input(tiny_config):
    pre = init_params(tiny_config, seed=11)
    snapshot = {k: pre[k].data.copy() for k in pre.keys()}
    tasks = [make_task(seed=13, n=5, d_x=1, d_y=1, n_ctx=2)]
    finetune(pre, tasks, "full", tiny_config, _smoke_spec(0, steps=2))
    for k, v in snapshot.items():
        np.testing.assert_array_equal(pre[k].data, v)


def test_finetune_rejects_bad_mode_and_empty_tasks(tiny_config):
    pre = init_params(tiny_config, seed=12)
    tasks = [make_task(seed=14)]
    with pytest.raises(ValueError):
        finetune(pre, tasks, "partial", tiny_config, _smoke_spec(0, steps=1))
    with pytest.raises(ValueError):
        finetune(pre, [], "full", tiny_config, _smoke_spec(0, steps=1))
