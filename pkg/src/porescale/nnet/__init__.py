"""Compact differentiable-network engine for scaleogram classification."""

from .augment import AugmentParams, augment, erase_rectangle
from .checkpoint import load_checkpoint, save_checkpoint
from .knn import knn_predict, pool_features
from .layers import (
    GELU,
    Conv2d,
    Dense,
    Flatten,
    Layer,
    MaxPool2d,
    Model,
    ReLU,
    cross_entropy_loss,
    layer_from_spec,
    porenet_s,
)
from .optim import SGD, MultiStepLR, SwaState
from .train import (
    EpochStats,
    TrainConfig,
    TrainResult,
    predict_labels,
    predict_logits,
    read_training_log,
    train,
    write_training_log,
)

__all__ = [
    "AugmentParams", "augment", "erase_rectangle",
    "load_checkpoint", "save_checkpoint",
    "knn_predict", "pool_features",
    "GELU", "Conv2d", "Dense", "Flatten", "Layer", "MaxPool2d", "Model",
    "ReLU", "cross_entropy_loss", "layer_from_spec", "porenet_s",
    "SGD", "MultiStepLR", "SwaState",
    "EpochStats", "TrainConfig", "TrainResult", "predict_labels",
    "predict_logits", "read_training_log", "train", "write_training_log",
]
