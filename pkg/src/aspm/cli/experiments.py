"""Experiment runners behind ``aspm run``.

Each runner writes its CSVs into the output directory and returns the list
of files it produced.  CSV content depends only on the resolved config and
seed; wall-clock timings go to ``bench.txt`` so the CSVs stay reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..evaluation import (
    agreement, derive_seed, metrics, confusion, predict_labels, run_kfold, run_loso,
    severity_confusion, subjects_from_recordings, threshold_table,
)
from ..evaluation.protocols import balance_majority_subsample
from ..evaluation import reports
from ..models import fit_classifier
from ..nn import TrainConfig
from ..quant import bench_inference, quantize, save, to_float_model
from ..signal import (
    Device, PeriodSet, filter_artifact_recordings, parse_annotation, parse_recording, preprocess,
)
from ..synth import cohort_configs, device_variant, generate
from .config import RunConfig

log = logging.getLogger(__name__)

REC_SUFFIX = ".rec.csv"
ANN_SUFFIX = ".ann.csv"


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

def recording_paths(subject_id: str, device, directory) -> tuple[Path, Path]:
    """``<dir>/<subject>.<device>.rec.csv`` and the matching annotation path."""
    stem = f"{subject_id}.{Device(device).value}"
    d = Path(directory)
    return d / (stem + REC_SUFFIX), d / (stem + ANN_SUFFIX)


def _split_stem(path: Path):
    name = path.name[:-len(REC_SUFFIX)]
    subject, _, device = name.rpartition(".")
    return subject, device


def load_directory(directory, device) -> list:
    """All ``(Recording, EventAnnotation)`` pairs of one device in a directory."""
    device = Device(device)
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"data directory not found: {d}")
    pairs = []
    for rec_path in sorted(d.glob("*" + REC_SUFFIX)):
        subject, dev = _split_stem(rec_path)
        if dev != device.value or not subject:
            continue
        ann_path = rec_path.with_name(rec_path.name[:-len(REC_SUFFIX)] + ANN_SUFFIX)
        rec = parse_recording(rec_path, device, subject, recording_id=f"{subject}_{device.value}")
        ann = parse_annotation(ann_path, rec.recording_id) if ann_path.exists() else None
        if ann is None:
            raise FileNotFoundError(f"annotation file missing for {rec_path}: {ann_path}")
        pairs.append((rec, ann))
    if not pairs:
        raise FileNotFoundError(f"no {device.value} recordings in {d}")
    return pairs


def synth_cohort(cfg: RunConfig, device) -> list:
    data = cfg["data"]
    base = cohort_configs(data["n_subjects"], data["hours"], (data["ahi_min"], data["ahi_max"]),
                          seed=cfg.seed, artifact_rate=data["artifact_rate"],
                          period_aligned=data["period_aligned"])
    return [generate(device_variant(c, device)) for c in base]


def load_pairs(cfg: RunConfig, device) -> list:
    """Recordings of one device after the artifact filter."""
    data = cfg["data"]
    if data["source"] == "synth":
        pairs = synth_cohort(cfg, device)
    else:
        pairs = load_directory(data["path"], device)
    kept = filter_artifact_recordings([r for r, _ in pairs], [a for _, a in pairs],
                                      data["artifact_threshold"])
    dropped = len(pairs) - len(kept)
    if dropped:
        log.info("artifact filter dropped %d of %d %s recordings", dropped, len(pairs),
                 Device(device).value)
    return kept


def periods_of(pairs, bla: bool) -> PeriodSet:
    return PeriodSet.concat([preprocess(r, a, bla=bla) for r, a in pairs])


def train_config(cfg: RunConfig, seed: int | None = None) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(batch_size=t["batch_size"], learning_rate=t["learning_rate"],
                       epochs=t["epochs"], validation_fraction=t["validation_fraction"],
                       seed=cfg.seed if seed is None else seed)


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------

def _write_kfold(result, out: Path, cfg: RunConfig) -> list[Path]:
    files = [out / "fold_metrics.csv", out / "train_log.csv", out / "summary.txt"]
    reports.write_fold_metrics(result, files[0])
    rows = []
    for f in result.folds:
        rep = getattr(f.model, "report", None)
        if rep is None:
            continue
        for e, (loss, kappa) in enumerate(zip(rep.train_loss, rep.val_kappa), start=1):
            rows.append([f.fold, e, loss, kappa])
    reports.write_csv(files[1], ["fold", "epoch", "train_loss", "val_kappa"], rows)
    lines = [f"experiment: {cfg.experiment}",
             f"model: {cfg['model']['family']}-{cfg['model']['size'].upper()}",
             result.summary_line("kappa")]
    for name in ("accuracy", "sensitivity", "specificity"):
        lines.append(result.summary_line(name))
    files[2].write_text("\n".join(lines) + "\n", encoding="utf-8")
    if cfg["run"]["save_models"]:
        for f in result.folds:
            if hasattr(f.model, "spec"):
                path = out / f"model_fold{f.fold}.aspm"
                save(to_float_model(f.model), path)
                files.append(path)
    return files


def run_exp1(cfg: RunConfig, out: Path, jobs: int | None) -> list[Path]:
    pairs = load_pairs(cfg, cfg["data"]["quality"])
    periods = periods_of(pairs, cfg["data"]["bla"])
    log.info("%d periods (%d normal, %d apneic)", len(periods), *periods.class_counts())
    p = cfg["protocol"]
    result = run_kfold(periods, cfg["model"]["family"], cfg["model"]["size"], train_config(cfg),
                       k=p["k"], balance=p["balance"], jobs=jobs, keep_models=True)
    return _write_kfold(result, out, cfg)


MIXED_BY_EXPERIMENT = {
    "exp2.1": "pretrain_high_then_finetune",
    "exp2.2": "pretrain_high_then_finetune",
    "exp2.3": "concat_matched",
    "exp2.4": "concat_full",
}


def aligned_device_pairs(cfg: RunConfig):
    """Low- and high-quality recordings of the subjects that pass the filter on both."""
    low = load_pairs(cfg, Device.LOW_QUALITY)
    high = load_pairs(cfg, Device.HIGH_QUALITY)
    common = {r.subject_id for r, _ in low} & {r.subject_id for r, _ in high}
    low = [(r, a) for r, a in low if r.subject_id in common]
    high_by = {r.subject_id: (r, a) for r, a in high if r.subject_id in common}
    return low, [high_by[r.subject_id] for r, _ in low]


def run_exp2(cfg: RunConfig, out: Path, jobs: int | None) -> list[Path]:
    mode = MIXED_BY_EXPERIMENT[cfg.experiment]
    low_pairs, high_pairs = aligned_device_pairs(cfg)
    bla = cfg["data"]["bla"]
    low = periods_of(low_pairs, bla)
    high = periods_of(high_pairs, bla)
    if mode == "concat_matched":
        if (len(low) != len(high) or not np.array_equal(low.index, high.index)
                or not np.array_equal(low.subject_id, high.subject_id)):
            raise ValueError("exp2.3 needs period-aligned low/high recordings of equal length")
    p = cfg["protocol"]
    finetune = 0 if cfg.experiment == "exp2.1" else p["finetune_epochs"]
    result = run_kfold(low, cfg["model"]["family"], cfg["model"]["size"], train_config(cfg),
                       k=p["k"], balance=p["balance"], mixed=mode, aux=high,
                       aux_weight=p["mixed_weight"], finetune_epochs=finetune, jobs=jobs,
                       keep_models=True)
    return _write_kfold(result, out, cfg)


def run_exp3(cfg: RunConfig, out: Path, jobs: int | None) -> list[Path]:
    pairs = load_pairs(cfg, cfg["data"]["quality"])
    subjects = subjects_from_recordings(pairs, bla=cfg["data"]["bla"])
    p = cfg["protocol"]
    results = run_loso(subjects, cfg["model"]["family"], cfg["model"]["size"], train_config(cfg),
                       variants=p["variants"], jobs=jobs)
    files = []
    tables, stats, pooled = {}, {}, []
    for v, res in results.items():
        subj = res.subjects
        for name, writer in (("subject_results", reports.write_subject_results),
                             ("scatter", reports.write_scatter),
                             ("bland_altman", reports.write_bland_altman)):
            path = out / f"{name}_{v}.csv"
            writer(subj, path)
            files.append(path)
        counts, _ = severity_confusion(subj)
        path = out / f"severity_confusion_{v}.csv"
        reports.write_severity_confusion(counts, path)
        files.append(path)
        tables[v] = threshold_table(subj, p["thresholds"])
        if len(subj) >= 3:
            stats[v] = agreement(res.actual, res.predicted)
            grid = np.linspace(0.0, max(60.0, float(res.predicted.max())), 61)
            path = out / f"bands_{v}.csv"
            reports.write_bands(stats[v], grid, path)
            files.append(path)
        m = res.pooled_metrics()
        pooled.append([v, m.kappa, m.accuracy, m.sensitivity, m.specificity, m.ppv])
    path = out / "threshold_table.csv"
    reports.write_threshold_table(tables, path)
    files.append(path)
    path = out / "agreement.csv"
    reports.write_agreement(stats, path)
    files.append(path)
    path = out / "pooled_metrics.csv"
    reports.write_csv(path, ["variant", "kappa", "accuracy", "sensitivity", "specificity", "ppv"],
                      pooled)
    files.append(path)
    lines = [f"experiment: {cfg.experiment}", f"subjects: {len(subjects)}"]
    for v, s in stats.items():
        lines.append(f"{v}: pearson_r={s.pearson_r:.4f} ba_bias={s.ba_bias:.4f}")
    path = out / "summary.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    files.append(path)
    return files


def split_subjects(periods: PeriodSet, test_fraction: float) -> tuple[PeriodSet, PeriodSet]:
    """The last ``test_fraction`` of subjects (in order of appearance) form the test set."""
    subjects = periods.subjects()
    n_test = min(max(int(round(len(subjects) * test_fraction)), 1), len(subjects) - 1)
    test_ids = subjects[len(subjects) - n_test:]
    mask = np.isin(periods.subject_id, test_ids)
    return periods.take(np.flatnonzero(~mask)), periods.take(np.flatnonzero(mask))


def run_exp4(cfg: RunConfig, out: Path, jobs: int | None) -> list[Path]:
    pairs = load_pairs(cfg, cfg["data"]["quality"])
    periods = periods_of(pairs, cfg["data"]["bla"])
    train_set, test_set = split_subjects(periods, cfg["protocol"]["test_fraction"])
    if cfg["protocol"]["balance"]:
        train_set = balance_majority_subsample(train_set, derive_seed(cfg.seed, 1))
    model = fit_classifier(cfg["model"]["family"], cfg["model"]["size"], train_set.x, train_set.y,
                           train_config(cfg))
    fm = to_float_model(model)
    n_cal = min(cfg["bench"]["calibration_periods"], len(train_set))
    qm = quantize(fm, train_set.x[:n_cal])
    files = [save(fm, out / "model_float.aspm"), save(qm, out / "model_int8.aspm")]
    rows, bench_lines = [], []
    for name, m, path in (("float32", fm, files[0]), ("int8", qm, files[1])):
        met = metrics(confusion(test_set.y, predict_labels(m.predict_proba(test_set.x))))
        rows.append([name, met.kappa, met.accuracy, met.sensitivity, met.specificity,
                     m.weight_bytes, path.stat().st_size])
        b = cfg["bench"]
        res = bench_inference(m, test_set.x, n_periods=b["n_periods"], warmup=b["warmup"],
                              repeats=b["repeats"])
        bench_lines.append(f"{name}: mean_ms_per_period={res.mean_ms:.4f} "
                           f"total_ms={res.total_ms:.2f} n_periods={res.n_periods}")
    path = out / "quant_metrics.csv"
    reports.write_csv(path, ["model", "kappa", "accuracy", "sensitivity", "specificity",
                             "weight_bytes", "file_bytes"], rows)
    files.append(path)
    path = out / "summary.txt"
    path.write_text(f"experiment: {cfg.experiment}\n"
                    + "".join(f"{r[0]}: kappa={r[1]:.4f} weight_bytes={r[5]}\n" for r in rows),
                    encoding="utf-8")
    files.append(path)
    path = out / "bench.txt"
    path.write_text("\n".join(bench_lines) + "\n", encoding="utf-8")
    files.append(path)
    return files


RUNNERS = {"exp1": run_exp1, "exp2.1": run_exp2, "exp2.2": run_exp2, "exp2.3": run_exp2,
           "exp2.4": run_exp2, "exp3": run_exp3, "exp4": run_exp4}


def run_experiment(cfg: RunConfig, out: Path, jobs: int | None = 1) -> list[Path]:
    return RUNNERS[cfg.experiment](cfg, Path(out), jobs)
