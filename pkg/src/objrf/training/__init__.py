"""Losses, optimizer, training loop, and test-time code/pose refinement."""

from objrf.training.sample import OccupancyMask, TrainSample
from objrf.training.losses import loss_occ, loss_rgb
from objrf.training.optim import Adam
from objrf.training.loop import ModelBundle, TrainConfig, train
from objrf.training.tto import TTOFlags, TTOResult, auto_decode, test_time_optimize

__all__ = [
    "OccupancyMask",
    "TrainSample",
    "loss_rgb",
    "loss_occ",
    "Adam",
    "TrainConfig",
    "ModelBundle",
    "train",
    "TTOFlags",
    "TTOResult",
    "test_time_optimize",
    "auto_decode",
]
