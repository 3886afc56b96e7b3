from .agreement import AgreementStats, agreement
from .metrics import (
    METRIC_NAMES, SEVERITY_ORDER, SEVERITY_THRESHOLDS, ConfusionMatrix, MetricSet, Severity,
    bayes_posterior, cohen_kappa, confusion, kappa_from_cm, metrics, severity_class, summarize,
)
from .protocols import (
    LOSO_VARIANTS, MIXED_MODES, FoldResult, KFoldResult, LosoResult, SubjectData, SubjectResult,
    ThresholdRow, balance_indices, balance_majority_subsample, build_folds, derive_seed,
    predict_labels, run_kfold, run_loso, severity_confusion, subject_result,
    subjects_from_recordings, threshold_row, threshold_table,
)

__all__ = [
    "AgreementStats", "agreement", "METRIC_NAMES", "SEVERITY_ORDER", "SEVERITY_THRESHOLDS",
    "ConfusionMatrix", "MetricSet", "Severity", "bayes_posterior", "cohen_kappa", "confusion",
    "kappa_from_cm", "metrics", "severity_class", "summarize", "LOSO_VARIANTS", "MIXED_MODES",
    "FoldResult", "KFoldResult", "LosoResult", "SubjectData", "SubjectResult", "ThresholdRow",
    "balance_indices", "balance_majority_subsample", "build_folds", "derive_seed",
    "predict_labels", "run_kfold", "run_loso", "severity_confusion", "subject_result",
    "subjects_from_recordings", "threshold_row", "threshold_table",
]
