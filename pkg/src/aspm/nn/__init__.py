from .core import (
    INPUT_LENGTH, LayerSpec, ModelSpec, ShapeError, check_params, conv1d, copy_params,
    cross_entropy, dense, dropout, flatten, forward, init_params, layer_shapes,
    loss_and_grads, maxpool1d, param_count, param_shapes, predict_proba, relu, softmax,
    softmax_output,
)
from .train import AdamState, TrainConfig, TrainReport, TrainingError, adam_step, split_validation, train

__all__ = [
    "INPUT_LENGTH", "LayerSpec", "ModelSpec", "ShapeError", "check_params", "conv1d",
    "copy_params", "cross_entropy", "dense", "dropout", "flatten", "forward", "init_params",
    "layer_shapes", "loss_and_grads", "maxpool1d", "param_count", "param_shapes",
    "predict_proba", "relu", "softmax", "softmax_output", "AdamState", "TrainConfig",
    "TrainReport", "TrainingError", "adam_step", "split_validation", "train",
]
