"""Recurrent vulnerability locator implemented directly in numpy."""

from .detect import DetectionEntry, detect, detect_all, line_scores
from .model import Model, ModelConfig, kmax_average, kmax_indices, multiply_layer
from .train import Adamax, TrainConfig, cross_validate, train

__all__ = [
    "Adamax", "DetectionEntry", "Model", "ModelConfig", "TrainConfig", "cross_validate", "detect",
    "detect_all", "kmax_average", "kmax_indices", "line_scores", "multiply_layer", "train",
]
