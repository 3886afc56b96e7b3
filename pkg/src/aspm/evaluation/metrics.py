"""Confusion-derived metrics, severity classes and Bayes posterior.

Undefined values (a zero denominator) are returned as ``nan``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass

import numpy as np

NAN = float("nan")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricSet:
    kappa: float
    accuracy: float
    sensitivity: float
    specificity: float
    ppv: float

    def as_dict(self) -> dict:
        return asdict(self)


METRIC_NAMES = ("kappa", "accuracy", "sensitivity", "specificity", "ppv")


def confusion(labels, preds) -> ConfusionMatrix:
    labels = np.asarray(labels).astype(bool)
    preds = np.asarray(preds).astype(bool)
    if labels.shape != preds.shape:
        raise ValueError("labels and predictions differ in shape")
    return ConfusionMatrix(
        tp=int(np.sum(labels & preds)),
        fp=int(np.sum(~labels & preds)),
        fn=int(np.sum(labels & ~preds)),
        tn=int(np.sum(~labels & ~preds)),
    )


def _ratio(num: float, den: float) -> float:
    return num / den if den else NAN


def kappa_from_cm(cm: ConfusionMatrix) -> float:
    n = cm.total
    if n == 0:
        return NAN
    p_o = (cm.tp + cm.tn) / n
    p_e = ((cm.tp + cm.fp) * (cm.tp + cm.fn) + (cm.fn + cm.tn) * (cm.fp + cm.tn)) / n**2
    if math.isclose(p_e, 1.0, rel_tol=0.0, abs_tol=1e-15):
        return NAN
    return (p_o - p_e) / (1.0 - p_e)


def metrics(cm: ConfusionMatrix) -> MetricSet:
    return MetricSet(
        kappa=kappa_from_cm(cm),
        accuracy=_ratio(cm.tp + cm.tn, cm.total),
        sensitivity=_ratio(cm.tp, cm.tp + cm.fn),
        specificity=_ratio(cm.tn, cm.tn + cm.fp),
        ppv=_ratio(cm.tp, cm.tp + cm.fp),
    )


def cohen_kappa(labels, preds) -> float:
    return kappa_from_cm(confusion(labels, preds))


def bayes_posterior(prior: float, sensitivity: float, predicted_positive_rate: float) -> float:
    """P(A|P) = P(P|A) P(A) / P(P)."""
    if not predicted_positive_rate or math.isnan(predicted_positive_rate):
        return NAN
    return sensitivity * prior / predicted_positive_rate


class Severity(str, enum.Enum):
    NORMAL = "normal"
    MILD = "mild"
    MODERATE = "moderate"
    SEVERE = "severe"


SEVERITY_ORDER = (Severity.NORMAL, Severity.MILD, Severity.MODERATE, Severity.SEVERE)
SEVERITY_THRESHOLDS = (5.0, 15.0, 30.0)


def severity_class(ahi: float) -> Severity:
    if ahi < 0 or math.isnan(ahi):
        raise ValueError(f"AHI must be non-negative, got {ahi}")
    if ahi < 5:
        return Severity.NORMAL
    if ahi < 15:
        return Severity.MILD
    if ahi < 30:
        return Severity.MODERATE
    return Severity.SEVERE


def summarize(sets) -> dict:
    """Mean and sample SD of every metric, ignoring undefined entries."""
    out = {}
    for name in METRIC_NAMES:
        vals = np.array([getattr(m, name) for m in sets], dtype=np.float64)
        vals = vals[~np.isnan(vals)]
        mean = float(vals.mean()) if vals.size else NAN
        sd = float(vals.std(ddof=1)) if vals.size > 1 else NAN
        out[name] = (mean, sd)
    return out
