"""Named MLP/CNN builders in three sizes and a uniform classifier wrapper."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import (
    ModelSpec, TrainConfig, TrainReport, conv1d, dense, dropout, flatten, maxpool1d,
    predict_proba, relu, softmax_output, train,
)

SIZES = ("S", "M", "L")
MLP_HIDDEN = {"S": 50, "M": 100, "L": 200}
CNN_FILTERS = {"S": (32, 64, 128), "M": (32, 64, 128, 256), "L": (32, 64, 128, 256, 512)}
CNN_DENSE = {"S": (128,), "M": (256,), "L": (256, 256)}
FOREST_TREES = {"S": 50, "M": 200, "L": 500}
DROPOUT_RATE = 0.5


def _check_size(size: str) -> str:
    size = str(size).upper()
    if size not in SIZES:
        raise ValueError(f"unknown model size {size!r}; expected one of {SIZES}")
    return size


def build_spec(family: str, size: str) -> ModelSpec:
    family = str(family).lower()
    size = _check_size(size)
    if family == "mlp":
        layers = [dense(MLP_HIDDEN[size]), relu(), dropout(DROPOUT_RATE), softmax_output(2)]
    elif family == "cnn":
        layers = []
        for f in CNN_FILTERS[size]:
            layers += [conv1d(f, 5), relu(), maxpool1d()]
        layers.append(flatten())
        for units in CNN_DENSE[size]:
            layers += [dense(units), relu(), dropout(DROPOUT_RATE)]
        layers.append(softmax_output(2))
    else:
        raise ValueError(f"unknown neural family {family!r}; expected 'mlp' or 'cnn'")
    return ModelSpec(tuple(layers), name=f"{family}-{size}")


@dataclass
class NeuralClassifier:
    spec: ModelSpec
    params: list
    report: TrainReport | None = None

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return predict_proba(self.params, self.spec, x)


def fit_classifier(family: str, size: str, x: np.ndarray, y: np.ndarray,
                   cfg: TrainConfig = TrainConfig(), *, sample_weight=None, validation=None,
                   init=None):
    """Train a neural net or a forest and return an object with ``predict_proba``."""
    family = str(family).lower()
    if family == "rf":
        from .forest import ForestSpec, rf_fit
        return rf_fit(x, y, ForestSpec(FOREST_TREES[_check_size(size)]), seed=cfg.seed)
    spec = build_spec(family, size)
    report = train(spec, x, y, cfg, sample_weight=sample_weight, validation=validation, init=init)
    return NeuralClassifier(spec, report.best_params, report)
