"""ADAM and the mini-batch training loop with validation-kappa selection."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import ModelSpec, check_params, copy_params, init_params, loss_and_grads, predict_proba


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1000
    learning_rate: float = 0.001
    epochs: int = 500
    validation_fraction: float = 0.30
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shuffle: bool = True

    def __post_init__(self):
        if self.batch_size <= 0 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs non-negative")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class AdamState:
    m: list
    v: list

    @classmethod
    def zeros_like(cls, params: list) -> "AdamState":
        m = [None if p is None else (np.zeros_like(p[0]), np.zeros_like(p[1])) for p in params]
        v = [None if p is None else (np.zeros_like(p[0]), np.zeros_like(p[1])) for p in params]
        return cls(m, v)


def adam_step(params: list, grads: list, state: AdamState, t: int, cfg: TrainConfig = TrainConfig()):
    """One bias-corrected ADAM update, applied in place.  Returns ``(params, state)``."""
    if t < 1:
        raise ValueError("ADAM step counter starts at 1")
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p is None:
            continue
        for pi, gi, mi, vi in zip(p, g, m, v):
            mi *= b1
            mi += (1.0 - b1) * gi
            vi *= b2
            vi += (1.0 - b2) * gi * gi
            pi -= cfg.learning_rate * (mi / c1) / (np.sqrt(vi / c2) + cfg.eps)
    return params, state


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_kappa: list = field(default_factory=list)
    best_epoch: int = -1          # 1-based
    best_params: Optional[list] = None
    final_params: Optional[list] = None

    @property
    def best_kappa(self) -> float:
        return self.val_kappa[self.best_epoch - 1]


def split_validation(n: int, fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic split: the last ``fraction`` of the samples validate."""
    n_val = int(round(n * fraction))
    n_val = min(max(n_val, 1), n - 1)
    return np.arange(n - n_val), np.arange(n - n_val, n)


def train(spec: ModelSpec, x: np.ndarray, y: np.ndarray, cfg: TrainConfig = TrainConfig(), *,
          sample_weight: np.ndarray | None = None,
          validation: tuple[np.ndarray, np.ndarray] | None = None,
          init: list | None = None,
          kappa_eval: Callable | None = None) -> TrainReport:
    """Train with mini-batch ADAM and keep the epoch with the best validation kappa.

    Samples with zero weight are dropped up front; they carry no gradient, so
    the run is identical to one that never saw them.  Without an explicit
    ``validation`` pair, the last ``cfg.validation_fraction`` of the
    remaining samples is held out.
    """
    if kappa_eval is None:
        from ..evaluation.metrics import cohen_kappa as kappa_eval
    if cfg.epochs < 1:
        raise TrainingError("training needs at least one epoch to select a best epoch")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    w = None
    if sample_weight is not None:
        w = np.asarray(sample_weight, dtype=np.float64)
        keep = w > 0
        x, y, w = x[keep], y[keep], w[keep]
    if validation is None:
        if len(y) < 2:
            raise TrainingError("not enough samples to split off a validation set")
        tr, va = split_validation(len(y), cfg.validation_fraction)
        x_val, y_val = x[va], y[va]
        x, y = x[tr], y[tr]
        w = None if w is None else w[tr]
    else:
        x_val = np.asarray(validation[0], dtype=np.float64)
        y_val = np.asarray(validation[1], dtype=np.int64)
    if len(np.unique(y_val)) < 2:
        raise TrainingError("validation split must contain both classes")
    if len(y) == 0:
        raise TrainingError("empty training split")

    ss = np.random.SeedSequence(cfg.seed)
    init_rng, shuffle_rng, drop_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    if init is None:
        params = init_params(spec, init_rng)
    else:
        check_params(spec, init)
        params = copy_params(init)
    state = AdamState.zeros_like(params)
    report = TrainReport()
    best = -np.inf
    t = 0
    n = len(y)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(params, spec, x[idx], y[idx],
                                         None if w is None else w[idx],
                                         training=True, rng=drop_rng)
            t += 1
            adam_step(params, grads, state, t, cfg)
            total += loss * len(idx)
        report.train_loss.append(total / n)
        pred = (predict_proba(params, spec, x_val)[:, 1] >= 0.5).astype(np.int64)
        kappa = float(kappa_eval(y_val, pred))
        report.val_kappa.append(kappa)
        if kappa > best:
            best = kappa
            report.best_epoch = epoch
            report.best_params = copy_params(params)
    if report.best_params is None:
        # every epoch produced an undefined kappa; fall back to the last state
        report.best_epoch = cfg.epochs
        report.best_params = copy_params(params)
    report.final_params = params
    return report
