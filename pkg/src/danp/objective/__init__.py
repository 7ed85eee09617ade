"""Losses, metrics, and training loops."""

from .losses import elbo_loss, gaussian_loglik, kl_diag_gaussians
from .metrics import (
    DEFAULT_CI_LEVELS,
    DEFAULT_LEVELS,
    MetricReport,
    aggregate_reports,
    calibration_metrics,
    crps_gaussian,
    evaluate_task,
    mixture_moments,
    normalized_loglik,
    predictive_samples,
)
from .training import TrainingAbort, TrainSpec, finetune, train

__all__ = [
    "elbo_loss", "gaussian_loglik", "kl_diag_gaussians",
    "DEFAULT_CI_LEVELS", "DEFAULT_LEVELS", "MetricReport", "aggregate_reports",
    "calibration_metrics", "crps_gaussian", "evaluate_task", "mixture_moments",
    "normalized_loglik", "predictive_samples",
    "TrainingAbort", "TrainSpec", "finetune", "train",
]
