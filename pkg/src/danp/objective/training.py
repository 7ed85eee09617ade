"""Training and fine-tuning loops: Adam, cosine schedule, loss curve."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..model import ModelConfig, ParamStore, init_params
from ..numerics import Tape, add, adam_step, backward, cosine_lr, init_optimizer, mul, zero_grads
from ..tasks import STREAM_LATENT, TaskBatch, derive_seed
from .losses import elbo_loss

log = logging.getLogger(__name__)


class TrainingAbort(RuntimeError):
    """Loss went non-finite; carries the offending step index."""

    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value


@dataclass
class TrainSpec:
    total_steps: int
    batch_size: int = 16
    base_lr: float = 1e-4
    weight_decay: float = 0.0
    seed: int = 0
    elbo_latent_samples: int = 1
    eval_latent_samples: int = 50
    warmup_steps: int = 0
    clip_norm: float = 0.0

    def __post_init__(self):
        if self.total_steps < 1 or self.batch_size < 1:
            raise ValueError("total_steps and batch_size must be >= 1")
        if self.elbo_latent_samples < 1 or self.eval_latent_samples < 1:
            raise ValueError("latent sample counts must be >= 1")
        if self.warmup_steps < 0 or self.warmup_steps >= self.total_steps:
            raise ValueError("warmup_steps must be in [0, total_steps)")
        if self.clip_norm < 0.0:
            raise ValueError("clip_norm must be >= 0 (0 disables clipping)")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train spec fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "total_steps": self.total_steps,
            "batch_size": self.batch_size,
            "base_lr": self.base_lr,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
            "elbo_latent_samples": self.elbo_latent_samples,
            "eval_latent_samples": self.eval_latent_samples,
            "warmup_steps": self.warmup_steps,
            "clip_norm": self.clip_norm,
        }


def _lr_at(step: int, spec: TrainSpec) -> float:
    """Linear warmup to base_lr, then the cosine decay over the remainder.

    warmup_steps=0 reproduces the plain cosine schedule exactly.
    """
    if step < spec.warmup_steps:
        return spec.base_lr * (step + 1) / spec.warmup_steps
    return cosine_lr(step - spec.warmup_steps,
                     spec.total_steps - spec.warmup_steps, spec.base_lr)


def _clip_grads(grads: dict, clip_norm: float) -> dict:
    """Scale the whole gradient so its global L2 norm is at most clip_norm."""
    total = 0.0
    for g in grads.values():
        total += float((g.astype(np.float64) ** 2).sum())
    norm = np.sqrt(total)
    if norm <= clip_norm:
        return grads
    scale = clip_norm / norm
    return {k: g * scale for k, g in grads.items()}


def _task_fn(tasks):
    if hasattr(tasks, "task"):
        return tasks.task
    if callable(tasks):
        return tasks
    raise TypeError("task stream must expose .task(index) or be callable")


def _run_steps(params: ParamStore, trainable: list[str], tasks_at, config: ModelConfig,
               spec: TrainSpec, curve: list) -> None:
    state = init_optimizer({k: params[k] for k in trainable},
                           weight_decay=spec.weight_decay)
    log_every = max(1, spec.total_steps // 20)
    for step in range(spec.total_steps):
        lr = _lr_at(step, spec)
        zero_grads(params.as_dict())
        with Tape() as tape:
            total = None
            for i in range(spec.batch_size):
                idx = step * spec.batch_size + i
                task = tasks_at(idx)
                rng = np.random.default_rng(derive_seed(spec.seed, STREAM_LATENT + idx))
                term = elbo_loss(task, params, config, rng,
                                 n_latent_samples=spec.elbo_latent_samples)
                total = term if total is None else add(total, term)
            loss = mul(total, 1.0 / spec.batch_size)
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            raise TrainingAbort(step, loss_val)
        backward(loss, tape)
        grads = {k: params[k].grad for k in trainable if params[k].grad is not None}
        if spec.clip_norm > 0.0 and grads:
            grads = _clip_grads(grads, spec.clip_norm)
        adam_step(params.as_dict(), grads, state, lr)
        curve.append((step, lr, loss_val))
        if step % log_every == 0 or step == spec.total_steps - 1:
            log.info("step %d/%d lr %.3g loss %.4f", step, spec.total_steps, lr, loss_val)


def train(tasks, config: ModelConfig, spec: TrainSpec) -> tuple[ParamStore, list]:
    """Train fresh parameters against an infinite task stream.

    Step s consumes stream indices [s*batch_size, (s+1)*batch_size); the curve
    is a list of (step, lr, loss) rows, one per step.
    """
    params = init_params(config, spec.seed)
    curve: list = []
    _run_steps(params, list(params.keys()), _task_fn(tasks), config, spec, curve)
    return params, curve


def finetune(pretrained: ParamStore, tasks: list[TaskBatch], mode: str,
             config: ModelConfig, spec: TrainSpec) -> tuple[ParamStore, list]:
    """Adapt a copy of ``pretrained`` on a finite task list, cycled in order.

    mode "full" updates everything; "freeze" updates only the decoder group,
    leaving every encoder tensor bitwise unchanged.
    """
    if mode not in ("full", "freeze"):
        raise ValueError(f"mode must be 'full' or 'freeze', got {mode!r}")
    if not tasks:
        raise ValueError("finetune needs a nonempty task list")
    params = pretrained.copy()
    trainable = params.decoder_keys if mode == "freeze" else list(params.keys())
    curve: list = []
    _run_steps(params, trainable, lambda i: tasks[i % len(tasks)], config, spec, curve)
    return params, curve
