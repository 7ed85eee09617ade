"""Shared fixtures: tiny model configs and synthetic tasks."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from danp.model import ModelConfig
from danp.tasks import TaskBatch

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture
def tiny_config():
    """Smallest legal DANP: full DAB + latent path, cheap to run."""
    return ModelConfig(d_r=8, det_hidden=16, det_layers=2, det_heads=2,
                      lat_hidden=4, lat_layers=1, lat_mlp_hidden=8,
                      lat_mlp_layers=2)


@pytest.fixture
def tiny_fixed_config():
    """Deterministic fixed-dims baseline (no DAB, no latent)."""
    return ModelConfig(d_r=8, det_hidden=16, det_layers=2, det_heads=2,
                      enable_dab=False, enable_latent=False, fixed_dims=(2, 1))


def make_task(seed: int = 0, n: int = 6, d_x: int = 2, d_y: int = 1,
              n_ctx: int = 3) -> TaskBatch:
    rng = np.random.default_rng(seed)
    return TaskBatch(
        x=rng.normal(size=(n, d_x)),
        y=rng.normal(size=(n, d_y)),
        context_indices=np.arange(n_ctx),
    )


@pytest.fixture
def small_task():
    return make_task()
