"""Dimension-agnostic neural processes on a minimal numpy autodiff core."""

__version__ = "0.1.0"

from . import bo, checkpoint, model, numerics, objective, taskgen
from .tasks import MalformedTaskError, TaskBatch, derive_seed

__all__ = [
    "bo", "checkpoint", "model", "numerics", "objective", "taskgen",
    "MalformedTaskError", "TaskBatch", "derive_seed", "__version__",
]
