"""Experiment protocols: k-fold CV, mixed-quality training and LOSO AHI estimation."""

from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from ..models import fit_classifier
from ..nn import TrainConfig, split_validation
from ..signal import (
    PERIOD_SECONDS, RESPIRATORY_KINDS, EventAnnotation, PeriodSet, Recording, preprocess,
)
from .metrics import (
    SEVERITY_ORDER, SEVERITY_THRESHOLDS, ConfusionMatrix, MetricSet, Severity, bayes_posterior,
    confusion, metrics, severity_class, summarize,
)

log = logging.getLogger(__name__)

MIXED_MODES = ("none", "pretrain_high_then_finetune", "concat_matched", "concat_full")
LOSO_VARIANTS = ("C_b", "C_i", "C_c")


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint32)[0])


def predict_labels(proba: np.ndarray) -> np.ndarray:
    return (np.asarray(proba)[:, 1] >= 0.5).astype(np.int64)


# ---------------------------------------------------------------------------
# Balancing and folds
# ---------------------------------------------------------------------------

def balance_indices(y: np.ndarray, seed: int) -> np.ndarray:
    """Indices of a majority-subsampled, order-preserving balanced subset."""
    y = np.asarray(y)
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("balancing needs both classes")
    if pos.size == neg.size:
        return np.arange(y.size)
    minority, majority = (pos, neg) if pos.size < neg.size else (neg, pos)
    rng = np.random.default_rng(seed)
    kept = rng.choice(majority, size=minority.size, replace=False)
    return np.sort(np.concatenate([minority, kept]))


def balance_majority_subsample(periods: PeriodSet, seed: int) -> PeriodSet:
    return periods.take(balance_indices(periods.y, seed))


def build_folds(n, k: int = 10) -> list[np.ndarray]:
    """Contiguous equal-size folds in original order; the remainder is dropped."""
    n = len(n) if not isinstance(n, (int, np.integer)) else int(n)
    if k < 2:
        raise ValueError("need at least 2 folds")
    if n < k:
        raise ValueError(f"cannot build {k} folds from {n} items")
    size = n // k
    return [np.arange(i * size, (i + 1) * size) for i in range(k)]


# ---------------------------------------------------------------------------
# k-fold cross-validation
# ---------------------------------------------------------------------------

@dataclass
class FoldResult:
    fold: int
    metrics: MetricSet
    cm: ConfusionMatrix
    n_train: int
    train_class_counts: tuple
    best_epoch: int = -1
    model: object = None


@dataclass
class KFoldResult:
    folds: list
    family: str
    size: str
    mixed: str = "none"

    @property
    def summary(self) -> dict:
        return summarize([f.metrics for f in self.folds])

    def summary_line(self, name: str = "kappa") -> str:
        mean, sd = self.summary[name]
        return f"{name} mean ± sd: {mean:.4f} ± {sd:.4f}"


@dataclass
class _FoldJob:
    fold: int
    data: PeriodSet
    orig_index: np.ndarray
    test_idx: np.ndarray
    train_idx: np.ndarray
    family: str
    size: str
    cfg: TrainConfig
    balance: bool
    mixed: str
    aux: Optional[PeriodSet]
    aux_weight: float
    finetune_epochs: Optional[int]
    keep_model: bool


def _aux_excluding(aux: PeriodSet, subjects) -> PeriodSet:
    return aux.take(np.flatnonzero(~np.isin(aux.subject_id, list(subjects))))


def _run_fold(job: _FoldJob) -> FoldResult:
    data, cfg = job.data, job.cfg
    train_set = data.take(job.train_idx)
    train_orig = job.orig_index[job.train_idx]
    test_set = data.take(job.test_idx)
    if job.balance:
        sel = balance_indices(train_set.y, derive_seed(cfg.seed, job.fold, 1))
        train_set, train_orig = train_set.take(sel), train_orig[sel]
    test_subjects = set(test_set.subject_id.tolist())
    best_epoch = -1
    if job.mixed == "none":
        model = fit_classifier(job.family, job.size, train_set.x, train_set.y, cfg)
    elif job.mixed in ("concat_matched", "concat_full"):
        tr, va = split_validation(len(train_set), cfg.validation_fraction)
        if job.mixed == "concat_matched":
            aux_train = job.aux.take(train_orig[tr])
        else:
            aux_train = _aux_excluding(job.aux, test_subjects)
        x = np.concatenate([train_set.x[tr], aux_train.x])
        y = np.concatenate([train_set.y[tr], aux_train.y])
        w = np.concatenate([np.ones(tr.size), np.full(len(aux_train), job.aux_weight)])
        model = fit_classifier(job.family, job.size, x, y, cfg, sample_weight=w,
                               validation=(train_set.x[va], train_set.y[va]))
    elif job.mixed == "pretrain_high_then_finetune":
        aux_train = _aux_excluding(job.aux, test_subjects)
        if job.balance:
            aux_train = balance_majority_subsample(aux_train, derive_seed(cfg.seed, job.fold, 2))
        model = fit_classifier(job.family, job.size, aux_train.x, aux_train.y, cfg)
        epochs = cfg.epochs if job.finetune_epochs is None else job.finetune_epochs
        if epochs > 0:
            model = fit_classifier(job.family, job.size, train_set.x, train_set.y,
                                   replace(cfg, epochs=epochs), init=model.params)
    else:
        raise ValueError(f"unknown mixed mode {job.mixed!r}")
    report = getattr(model, "report", None)
    if report is not None:
        best_epoch = report.best_epoch
    pred = predict_labels(model.predict_proba(test_set.x))
    cm = confusion(test_set.y, pred)
    return FoldResult(job.fold, metrics(cm), cm, len(train_set), train_set.class_counts(),
                      best_epoch, model if job.keep_model else None)


def _map_jobs(fn, jobs_list, jobs: int | None):
    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1 or len(jobs_list) <= 1:
        return [fn(j) for j in jobs_list]
    with ProcessPoolExecutor(max_workers=min(jobs, len(jobs_list))) as ex:
        return list(ex.map(fn, jobs_list))


def run_kfold(periods: PeriodSet, family: str, size: str, cfg: TrainConfig = TrainConfig(), *,
              k: int = 10, balance: bool = True, mixed: str = "none",
              aux: PeriodSet | None = None, aux_weight: float = 1.0,
              finetune_epochs: int | None = None, folds: Sequence[int] | None = None,
              jobs: int | None = 1, keep_models: bool = False) -> KFoldResult:
    """k-fold CV without pre-shuffling.

    With ``balance`` the whole set is majority-subsampled before folding, and
    each training portion is re-balanced so its class counts are exactly
    equal.  ``mixed`` selects how the high-quality ``aux`` set joins training:

    * ``pretrain_high_then_finetune``: train on ``aux`` (minus the test
      subjects), then continue on the fold's training data for
      ``finetune_epochs`` (``0`` evaluates the pretrained model as-is).
    * ``concat_matched``: ``aux`` is period-aligned with ``periods``; the
      aligned training periods are appended with loss weight ``aux_weight``.
    * ``concat_full``: all ``aux`` periods from non-test subjects are appended.

    In the concat modes validation uses target data only.
    """
    if mixed not in MIXED_MODES:
        raise ValueError(f"mixed must be one of {MIXED_MODES}")
    if mixed != "none" and aux is None:
        raise ValueError(f"mixed mode {mixed!r} needs an aux period set")
    if mixed == "concat_matched" and len(aux) != len(periods):
        raise ValueError("concat_matched needs aux aligned one-to-one with periods")
    if not 0.0 <= aux_weight <= 1.0:
        raise ValueError("aux_weight must lie in [0, 1]")
    if str(family).lower() == "rf" and mixed != "none":
        raise ValueError("mixed-quality training is only defined for neural classifiers")

    orig = balance_indices(periods.y, cfg.seed) if balance else np.arange(len(periods))
    data = periods.take(orig)
    fold_idx = build_folds(len(data), k)
    jobs_list = []
    for i in (range(k) if folds is None else folds):
        train_idx = np.concatenate([f for j, f in enumerate(fold_idx) if j != i])
        fold_cfg = replace(cfg, seed=derive_seed(cfg.seed, i))
        jobs_list.append(_FoldJob(i, data, orig, fold_idx[i], train_idx, family, size, fold_cfg,
                                  balance, mixed, aux, aux_weight, finetune_epochs, keep_models))
    results = _map_jobs(_run_fold, jobs_list, jobs)
    for r in results:
        log.info("fold %d: kappa=%.4f acc=%.4f", r.fold, r.metrics.kappa, r.metrics.accuracy)
    return KFoldResult(results, family, size, mixed)


# ---------------------------------------------------------------------------
# Leave-one-subject-out
# ---------------------------------------------------------------------------

@dataclass
class SubjectData:
    subject_id: str
    periods: PeriodSet
    n_events: int

    @property
    def hours(self) -> float:
        return len(self.periods) * PERIOD_SECONDS / 3600.0

    @property
    def actual_ahi(self) -> float:
        return self.n_events / self.hours if self.hours > 0 else float("nan")


@dataclass
class SubjectResult:
    subject_id: str
    actual_ahi: float
    predicted_ahi: float
    n_periods: int
    cm: ConfusionMatrix = None

    @property
    def metrics(self) -> MetricSet:
        return metrics(self.cm)

    @property
    def actual_severity(self) -> Severity:
        return severity_class(self.actual_ahi)

    @property
    def predicted_severity(self) -> Severity:
        return severity_class(self.predicted_ahi)


def subjects_from_recordings(pairs: Sequence[tuple[Recording, EventAnnotation]],
                             bla: bool = True) -> list[SubjectData]:
    """Group preprocessed recordings by subject.

    Events are counted only where they overlap the span covered by whole
    periods, so actual and predicted AHI share the same denominator.
    """
    grouped: dict[str, list] = {}
    for rec, ann in pairs:
        ps = preprocess(rec, ann, bla=bla)
        t0 = float(np.floor(rec.timestamps[0]))
        t1 = t0 + len(ps) * PERIOD_SECONDS
        n_ev = sum(1 for ev in ann.of_kind(*RESPIRATORY_KINDS) if ev.start < t1 and ev.end > t0)
        grouped.setdefault(rec.subject_id, []).append((ps, n_ev))
    return [SubjectData(sid, PeriodSet.concat([p for p, _ in items]), sum(n for _, n in items))
            for sid, items in grouped.items()]


def subject_result(subject: SubjectData, pred_labels) -> SubjectResult:
    pred_labels = np.asarray(pred_labels, dtype=np.int64)
    hours = subject.hours
    pred_ahi = float(pred_labels.sum()) / hours
    return SubjectResult(subject.subject_id, subject.actual_ahi, pred_ahi, len(subject.periods),
                         confusion(subject.periods.y, pred_labels))


@dataclass
class LosoResult:
    variant: str
    subjects: list = field(default_factory=list)

    @property
    def actual(self) -> np.ndarray:
        return np.array([s.actual_ahi for s in self.subjects])

    @property
    def predicted(self) -> np.ndarray:
        return np.array([s.predicted_ahi for s in self.subjects])

    def pooled_metrics(self) -> MetricSet:
        """Period-level metrics over all held-out subjects together."""
        cms = [s.cm for s in self.subjects]
        return metrics(ConfusionMatrix(sum(c.tp for c in cms), sum(c.fp for c in cms),
                                       sum(c.fn for c in cms), sum(c.tn for c in cms)))

    def subject_summary(self) -> dict:
        return summarize([s.metrics for s in self.subjects])


@dataclass(frozen=True)
class DefaultTrainer:
    """Picklable ``trainer(train_set, seed)`` around :func:`fit_classifier`."""
    family: str
    size: str
    cfg: TrainConfig

    def __call__(self, train_set: PeriodSet, seed: int):
        return fit_classifier(self.family, self.size, train_set.x, train_set.y,
                              replace(self.cfg, seed=seed))


@dataclass
class _LosoJob:
    index: int
    subjects: list
    variants: tuple
    trainer: Callable
    seed: int


def _run_loso_subject(job: _LosoJob) -> dict:
    held = job.subjects[job.index]
    train_set = PeriodSet.concat([s.periods for i, s in enumerate(job.subjects) if i != job.index])
    proba = {}
    need_b = any(v in ("C_b", "C_c") for v in job.variants)
    need_i = any(v in ("C_i", "C_c") for v in job.variants)
    seed = derive_seed(job.seed, job.index)
    if need_b:
        balanced = balance_majority_subsample(train_set, derive_seed(job.seed, job.index, 1))
        proba["C_b"] = job.trainer(balanced, seed).predict_proba(held.periods.x)
    if need_i:
        proba["C_i"] = job.trainer(train_set, seed).predict_proba(held.periods.x)
    if "C_c" in job.variants:
        proba["C_c"] = 0.5 * (proba["C_b"] + proba["C_i"])
    return {v: subject_result(held, predict_labels(proba[v])) for v in job.variants}


def run_loso(subjects: Sequence[SubjectData], family: str = "cnn", size: str = "M",
             cfg: TrainConfig = TrainConfig(), *, variants: Sequence[str] = LOSO_VARIANTS,
             trainer: Callable | None = None, jobs: int | None = 1) -> dict[str, LosoResult]:
    """Hold out each subject in turn and estimate its AHI.

    ``C_b`` trains on majority-subsampled data, ``C_i`` on the natural class
    distribution, and ``C_c`` averages their class probabilities.  A custom
    ``trainer(train_set, seed)`` may replace the default model factory.
    """
    variants = tuple(variants)
    for v in variants:
        if v not in LOSO_VARIANTS:
            raise ValueError(f"unknown LOSO variant {v!r}")
    usable = []
    for s in subjects:
        if len(s.periods) == 0:
            warnings.warn(f"subject {s.subject_id!r} has less than 60 s of data; skipped")
            continue
        usable.append(s)
    if len(usable) < 2:
        raise ValueError("LOSO needs at least two subjects with data")
    trainer = trainer or DefaultTrainer(family, size, cfg)
    jobs_list = [_LosoJob(i, usable, variants, trainer, cfg.seed) for i in range(len(usable))]
    per_subject = _map_jobs(_run_loso_subject, jobs_list, jobs)
    out = {v: LosoResult(v) for v in variants}
    for res in per_subject:
        for v in variants:
            out[v].subjects.append(res[v])
    return out


# ---------------------------------------------------------------------------
# Subject-level tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdRow:
    threshold: float
    actual_below: int
    predicted_below: int
    actual_above: int
    predicted_above: int
    metrics: MetricSet
    prior: float          # P(A)
    posterior: float      # P(A|P)


def threshold_row(actual_ahi, predicted_ahi, threshold: float) -> ThresholdRow:
    a = np.asarray(actual_ahi, dtype=np.float64) >= threshold
    p = np.asarray(predicted_ahi, dtype=np.float64) >= threshold
    n = a.size
    if n == 0:
        raise ValueError("threshold table needs at least one subject")
    cm = confusion(a, p)
    m = metrics(cm)
    prior = a.sum() / n
    return ThresholdRow(threshold, int(n - a.sum()), int(n - p.sum()), int(a.sum()), int(p.sum()),
                        m, float(prior), bayes_posterior(prior, m.sensitivity, p.sum() / n))


def threshold_table(results: Sequence[SubjectResult],
                    thresholds: Sequence[float] = SEVERITY_THRESHOLDS) -> list[ThresholdRow]:
    actual = [r.actual_ahi for r in results]
    predicted = [r.predicted_ahi for r in results]
    return [threshold_row(actual, predicted, th) for th in thresholds]


def severity_confusion(results: Sequence[SubjectResult]) -> tuple[np.ndarray, np.ndarray]:
    """Counts (rows actual, columns predicted) and the per-predicted-column fractions."""
    pos = {s: i for i, s in enumerate(SEVERITY_ORDER)}
    counts = np.zeros((4, 4), dtype=np.int64)
    for r in results:
        counts[pos[r.actual_severity], pos[r.predicted_severity]] += 1
    col = counts.sum(axis=0, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(col > 0, counts / np.where(col > 0, col, 1), np.nan)
    return counts, frac
