"""Acceptance criteria.

Each test records one PASS/FAIL line (see ``conftest.py``) at the stated
tolerance.  Training budgets are reduced from the 500-epoch default so the
whole suite runs in minutes on a single core.
"""

import filecmp
import time
from pathlib import Path

import numpy as np
import pytest

from aspm.cli import main
from aspm.evaluation import (
    ConfusionMatrix, agreement, balance_majority_subsample, bayes_posterior, cohen_kappa, metrics,
    predict_labels, run_kfold, run_loso, subjects_from_recordings,
)
from aspm.models import build_spec, fit_classifier
from aspm.nn import (
    ModelSpec, TrainConfig, conv1d, dense, dropout, flatten, init_params, loss_and_grads,
    maxpool1d, param_count, relu, softmax_output,
)
from aspm.quant import FloatModel, bench_inference, quantize
from aspm.signal import Device, PeriodSet
from aspm.synth import cohort_configs, device_variant, generate

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def cohort(n, hours, ahi_range, seed, device, **overrides):
    cfgs = cohort_configs(n, hours, ahi_range, seed=seed, **overrides)
    return [generate(device_variant(c, device)) for c in cfgs]


def pooled(subjects):
    return PeriodSet.concat([s.periods for s in subjects])


@pytest.fixture(scope="module")
def clean_subjects():
    """20 subjects, 4 h each, AHIs spread over 0-40, high-quality variant."""
    return subjects_from_recordings(cohort(20, 4.0, (0.0, 40.0), 1, Device.HIGH_QUALITY))


# ---------------------------------------------------------------------------
# 1. architecture fidelity
# ---------------------------------------------------------------------------

def test_c1_parameter_counts(verdict):
    t = time.perf_counter()
    counts = {s: param_count(build_spec("cnn", s)) for s in "SML"}
    dt = time.perf_counter() - t
    ok = counts == {"S": 166658, "M": 413058, "L": 1069186} and dt < 1.0
    verdict(1, ok, f"CNN-S/M/L = {counts['S']}/{counts['M']}/{counts['L']} in {dt:.3f} s")


# ---------------------------------------------------------------------------
# 2. metric oracle
# ---------------------------------------------------------------------------

def test_c2_metric_oracle(verdict):
    t = time.perf_counter()
    m = metrics(ConfusionMatrix(tp=7, fp=3, fn=4, tn=15))
    got = np.array([m.accuracy, m.sensitivity, m.specificity, m.kappa, m.ppv,
                    bayes_posterior(11 / 29, 7 / 11, 10 / 29),
                    bayes_posterior(25 / 29, 21 / 25, 22 / 29)])
    want = np.array([0.7586, 0.6364, 0.8333, 0.4781, 0.7000, 0.7000, 0.9545])
    dt = time.perf_counter() - t
    err = float(np.max(np.abs(got - want)))
    verdict(2, err <= 5e-4 and dt < 1.0, f"max abs error {err:.2e} (tol 5e-4) in {dt:.3f} s")


# ---------------------------------------------------------------------------
# 3. gradient correctness
# ---------------------------------------------------------------------------

def _numeric(params, spec, x, y, h=1e-5):
    out = []
    for p in params:
        if p is None:
            out.append(None)
            continue
        gs = []
        for tensor in p:
            g = np.zeros_like(tensor)
            for i in np.ndindex(tensor.shape):
                old = tensor[i]
                tensor[i] = old + h
                lp = loss_and_grads(params, spec, x, y)[0]
                tensor[i] = old - h
                lm = loss_and_grads(params, spec, x, y)[0]
                tensor[i] = old
                g[i] = (lp - lm) / (2 * h)
            gs.append(g)
        out.append(gs)
    return out


def test_c3_gradient_check(verdict):
    t = time.perf_counter()
    rng = np.random.default_rng(3)
    # CNN-S layer sequence with small widths, input length 60
    spec = ModelSpec((conv1d(3), relu(), maxpool1d(), conv1d(4), relu(), maxpool1d(),
                      conv1d(4), relu(), maxpool1d(), flatten(), dense(6), relu(), dropout(0.5),
                      softmax_output(2)))
    params = [None if p is None else (p[0], rng.normal(0, 0.1, p[1].shape))
              for p in init_params(spec, rng)]
    x = rng.standard_normal((4, 60))
    y = np.array([0, 1, 1, 0])
    _, grads = loss_and_grads(params, spec, x, y)
    worst = 0.0
    for g, n in zip(grads, _numeric(params, spec, x, y)):
        if g is None:
            continue
        for a, b in zip(g, n):
            rel = np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-6)
            worst = max(worst, float(rel.max()))
    dt = time.perf_counter() - t
    verdict(3, worst < 1e-4 and dt < 60, f"max relative error {worst:.2e} (tol 1e-4) in {dt:.1f} s")


# ---------------------------------------------------------------------------
# 4. end-to-end synthetic pipeline
# ---------------------------------------------------------------------------

def test_c4_kfold_cnn_s(verdict, clean_subjects):
    t = time.perf_counter()
    res = run_kfold(pooled(clean_subjects), "cnn", "S", TrainConfig(epochs=15, seed=4), k=10)
    mean, sd = res.summary["kappa"]
    dt = time.perf_counter() - t
    verdict(4, mean >= 0.6 and dt < 1800,
            f"10-fold CNN-S kappa {mean:.3f} ± {sd:.3f} (need >= 0.6) in {dt:.0f} s")


# ---------------------------------------------------------------------------
# 5. BLA efficacy
# ---------------------------------------------------------------------------

def test_c5_bla_efficacy(verdict):
    pairs = cohort(10, 2.0, (0.0, 40.0), 5, Device.LOW_QUALITY)
    ps = {bla: pooled(subjects_from_recordings(pairs, bla=bla)) for bla in (True, False)}
    mlp_cfg = TrainConfig(epochs=200, batch_size=32, seed=5)
    k_mlp = {bla: run_kfold(ps[bla], "mlp", "S", mlp_cfg, k=5).summary["kappa"][0]
             for bla in ps}
    cnn_cfg = TrainConfig(epochs=8, seed=5)
    k_cnn = {bla: run_kfold(ps[bla], "cnn", "S", cnn_cfg, k=5, folds=[0, 1]).summary["kappa"][0]
             for bla in ps}
    gap = k_cnn[True] - k_cnn[False]
    verdict(5, k_mlp[True] >= k_mlp[False],
            f"MLP-S kappa with BLA {k_mlp[True]:.3f} vs without {k_mlp[False]:.3f}; "
            f"CNN-S gap {gap:+.3f} (reported only)")


# ---------------------------------------------------------------------------
# 6. LOSO / AHI
# ---------------------------------------------------------------------------

class _Lookup:
    """Per-period oracle: returns the true label of every known period vector."""

    def __init__(self, table):
        self.table = table

    def predict_proba(self, x):
        p1 = np.array([self.table[row.tobytes()] for row in np.asarray(x)], dtype=float)
        return np.c_[1.0 - p1, p1]


def test_c6_oracle_exact_ahi_and_trained_correlation(verdict, clean_subjects):
    aligned = subjects_from_recordings(
        cohort(8, 2.0, (0.0, 40.0), 6, Device.HIGH_QUALITY, period_aligned=True))
    table = {row.tobytes(): int(lab) for s in aligned for row, lab in zip(s.periods.x, s.periods.y)}
    oracle = run_loso(aligned, variants=("C_i",), trainer=lambda ts, seed: _Lookup(table))["C_i"]
    exact = bool(np.all(oracle.predicted == oracle.actual))

    t = time.perf_counter()
    res = run_loso(clean_subjects, "cnn", "S", TrainConfig(epochs=15, seed=6), variants=("C_i",))
    r = agreement(res["C_i"].actual, res["C_i"].predicted).pearson_r
    dt = time.perf_counter() - t
    in_range = bool(np.all((res["C_i"].predicted >= 0) & (res["C_i"].predicted <= 60)))
    verdict(6, exact and r >= 0.7 and in_range,
            f"oracle AHI exact: {exact}; trained CNN-S LOSO Pearson r {r:.3f} "
            f"(need >= 0.7) in {dt:.0f} s")


# ---------------------------------------------------------------------------
# 7. balancing behavior
# ---------------------------------------------------------------------------

def test_c7_balanced_overestimates(verdict):
    subjects = subjects_from_recordings(cohort(8, 2.0, (0.0, 12.0), 7, Device.HIGH_QUALITY))
    prevalence = float(pooled(subjects).y.mean())
    res = run_loso(subjects, "cnn", "S", TrainConfig(epochs=8, seed=7), variants=("C_b", "C_i"))
    ahi_b, ahi_i = res["C_b"].predicted.mean(), res["C_i"].predicted.mean()
    acc_b = res["C_b"].pooled_metrics().accuracy
    acc_i = res["C_i"].pooled_metrics().accuracy
    ok = prevalence < 0.25 and ahi_b >= ahi_i and acc_i >= acc_b
    verdict(7, ok, f"prevalence {prevalence:.3f}; mean predicted AHI C_b {ahi_b:.2f} vs "
                   f"C_i {ahi_i:.2f}; accuracy C_i {acc_i:.3f} vs C_b {acc_b:.3f}")


# ---------------------------------------------------------------------------
# 8. mixed-quality training
# ---------------------------------------------------------------------------

def test_c8_mixed_training(verdict):
    cfgs = cohort_configs(10, 2.0, (0.0, 40.0), seed=8)
    low = pooled(subjects_from_recordings([generate(device_variant(c, Device.LOW_QUALITY))
                                           for c in cfgs]))
    high = pooled(subjects_from_recordings([generate(device_variant(c, Device.HIGH_QUALITY))
                                            for c in cfgs]))
    cfg = TrainConfig(epochs=8, seed=8)
    noisy = run_kfold(low, "cnn", "S", cfg, k=5).summary["kappa"][0]
    clean = run_kfold(low, "cnn", "S", cfg, k=5, mixed="pretrain_high_then_finetune", aux=high,
                      finetune_epochs=0).summary["kappa"][0]

    short = TrainConfig(epochs=2, seed=8)
    a = run_kfold(low, "cnn", "S", short, k=5, folds=[2], keep_models=True)
    b = run_kfold(low, "cnn", "S", short, k=5, folds=[2], keep_models=True,
                  mixed="concat_matched", aux=high, aux_weight=0.0)
    diff = max(float(np.max(np.abs(ta - tb)))
               for pa, pb in zip(a.folds[0].model.params, b.folds[0].model.params)
               if pa is not None for ta, tb in zip(pa, pb))
    ok = abs(clean - noisy) <= 0.1 and diff <= 1e-9
    verdict(8, ok, f"clean->noisy kappa {clean:.3f} vs noisy->noisy {noisy:.3f} (|diff| <= 0.1); "
                   f"w=0 max parameter difference {diff:.1e} (tol 1e-9)")


# ---------------------------------------------------------------------------
# 9. quantization
# ---------------------------------------------------------------------------

def test_c9_quantization(verdict):
    subjects = subjects_from_recordings(cohort(10, 2.0, (0.0, 40.0), 9, Device.HIGH_QUALITY))
    train_set, test_set = pooled(subjects[:8]), pooled(subjects[8:])
    train_set = balance_majority_subsample(train_set, 9)
    model = fit_classifier("cnn", "S", train_set.x, train_set.y, TrainConfig(epochs=10, seed=9))
    fm = FloatModel(model.spec, model.params)
    qm = quantize(fm, train_set.x[:1000])
    k_f = cohen_kappa(test_set.y, predict_labels(fm.predict_proba(test_set.x)))
    k_q = cohen_kappa(test_set.y, predict_labels(qm.predict_proba(test_set.x)))
    ratio = qm.weight_bytes / fm.weight_bytes
    night_s = bench_inference(fm, test_set.x).total_ms / 1e3

    spec_l = build_spec("cnn", "L")
    fl = FloatModel(spec_l, init_params(spec_l, np.random.default_rng(9)))
    ql = quantize(fl, test_set.x[:500])
    t_f = bench_inference(fl, test_set.x).mean_ms
    t_q = bench_inference(ql, test_set.x).mean_ms
    ok = k_q >= k_f - 0.05 and ratio <= 0.30 and t_q < t_f and night_s < 1.0
    verdict(9, ok, f"kappa int8 {k_q:.3f} vs f32 {k_f:.3f}; storage {ratio:.1%}; "
                   f"CNN-L ms/period int8 {t_q:.3f} vs f32 {t_f:.3f}; CNN-S night {night_s:.3f} s")


# ---------------------------------------------------------------------------
# 10. determinism
# ---------------------------------------------------------------------------

def test_c10_run_determinism(verdict, tmp_path, capsys):
    tiny = ["--set", "data.n_subjects=6", "--set", "data.hours=1", "--set", "model.family=cnn",
            "--set", "train.batch_size=128", "--set", "protocol.k=3", "--epochs", "2",
            "--jobs", "1"]
    mismatched, compared = [], 0
    for exp in ("exp1", "exp2.3", "exp3", "exp4"):
        dirs = [tmp_path / f"{exp}_{i}" for i in range(2)]
        extra = ["--set", "data.period_aligned=true"] if exp == "exp2.3" else []
        for d in dirs:
            assert main(["run", str(CONFIGS / f"{exp}.ini"), "--out", str(d), *tiny, *extra,
                         "--set", "bench.n_periods=20", "--set", "bench.repeats=1"]) == 0
        capsys.readouterr()
        names = sorted(p.name for p in dirs[0].glob("*.csv"))
        compared += len(names)
        _, bad, errors = filecmp.cmpfiles(dirs[0], dirs[1], names, shallow=False)
        mismatched += bad + errors
    verdict(10, compared > 0 and not mismatched,
            f"{compared} report CSVs compared across repeated runs; mismatched: {mismatched or 'none'}")
