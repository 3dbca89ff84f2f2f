"""Trainer worker for the evaluation wire protocol."""

from .archs import ArchError, parse_arch
from .datasets import DatasetError, SplitData, load_dataset, synthetic_dataset
from .model import build_model, count_parameters, dropout_probabilities
from .protocol import Worker
from .training import (
    FINETUNE_PRESETS,
    TrainerConfig,
    TrainingFailed,
    lr_at,
    should_restart,
    train_and_score,
)

__all__ = [
    "ArchError",
    "DatasetError",
    "FINETUNE_PRESETS",
    "SplitData",
    "TrainerConfig",
    "TrainingFailed",
    "Worker",
    "build_model",
    "count_parameters",
    "dropout_probabilities",
    "load_dataset",
    "lr_at",
    "parse_arch",
    "should_restart",
    "synthetic_dataset",
    "train_and_score",
]
