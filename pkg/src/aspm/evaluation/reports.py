"""CSV and plot-data writers.  Output is byte-deterministic for equal inputs."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .agreement import AgreementStats
from .metrics import METRIC_NAMES, SEVERITY_ORDER
from .protocols import KFoldResult, SubjectResult, ThresholdRow


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "NaN"
        return repr(v)
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_fold_metrics(result: KFoldResult, path) -> None:
    header = ["fold", *METRIC_NAMES, "tp", "fp", "fn", "tn", "n_train", "best_epoch"]
    rows = [[f.fold, *(getattr(f.metrics, m) for m in METRIC_NAMES),
             f.cm.tp, f.cm.fp, f.cm.fn, f.cm.tn, f.n_train, f.best_epoch]
            for f in result.folds]
    summary = result.summary
    rows.append(["mean", *(summary[m][0] for m in METRIC_NAMES), "", "", "", "", "", ""])
    rows.append(["sd", *(summary[m][1] for m in METRIC_NAMES), "", "", "", "", "", ""])
    write_csv(path, header, rows)


def write_subject_results(results: Sequence[SubjectResult], path) -> None:
    header = ["subject_id", "actual_ahi", "predicted_ahi", "actual_severity",
              "predicted_severity", "n_periods", *METRIC_NAMES]
    rows = [[r.subject_id, r.actual_ahi, r.predicted_ahi, r.actual_severity.value,
             r.predicted_severity.value, r.n_periods, *(getattr(r.metrics, m) for m in METRIC_NAMES)]
            for r in results]
    write_csv(path, header, rows)


THRESHOLD_HEADER = ["variant", "threshold", "actual_below", "predicted_below", "actual_above",
                    "predicted_above", "accuracy", "sensitivity", "specificity", "kappa", "ppv",
                    "p_a", "p_a_given_p"]


def threshold_rows(variant: str, rows: Sequence[ThresholdRow]) -> list[list]:
    return [[variant, r.threshold, r.actual_below, r.predicted_below, r.actual_above,
             r.predicted_above, r.metrics.accuracy, r.metrics.sensitivity,
             r.metrics.specificity, r.metrics.kappa, r.metrics.ppv, r.prior, r.posterior]
            for r in rows]


def write_threshold_table(tables: dict, path) -> None:
    rows = []
    for variant, table in tables.items():
        rows.extend(threshold_rows(variant, table))
    write_csv(path, THRESHOLD_HEADER, rows)


def write_scatter(results: Sequence[SubjectResult], path) -> None:
    write_csv(path, ["predicted_ahi", "actual_ahi"],
              [[r.predicted_ahi, r.actual_ahi] for r in results])


def write_bland_altman(results: Sequence[SubjectResult], path) -> None:
    write_csv(path, ["mean_ahi", "difference"],
              [[(r.predicted_ahi + r.actual_ahi) / 2.0, r.predicted_ahi - r.actual_ahi]
               for r in results])


def write_bands(stats: AgreementStats, x_grid, path) -> None:
    x = np.asarray(x_grid, dtype=np.float64)
    fit = stats.fitted(x)
    ci = stats.confidence_half_width(x)
    pi = stats.prediction_half_width(x)
    write_csv(path, ["predicted_ahi", "fit", "ci_low", "ci_high", "pi_low", "pi_high"],
              zip(x, fit, fit - ci, fit + ci, fit - pi, fit + pi))


def write_agreement(stats_by_variant: dict, path) -> None:
    header = ["variant", "n", "pearson_r", "ols_slope", "ols_intercept", "ba_bias",
              "ba_loa_low", "ba_loa_high"]
    rows = [[v, s.n, s.pearson_r, s.ols_slope, s.ols_intercept, s.ba_bias, s.ba_loa_low,
             s.ba_loa_high] for v, s in stats_by_variant.items()]
    write_csv(path, header, rows)


def write_severity_confusion(counts: np.ndarray, path) -> None:
    names = [s.value for s in SEVERITY_ORDER]
    write_csv(path, ["actual\\predicted", *names],
              [[names[i], *counts[i].tolist()] for i in range(len(names))])


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path
