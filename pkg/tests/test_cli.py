import csv
import json
from pathlib import Path

import numpy as np
import pytest

from aspm.cli import ConfigError, load_config, main
from aspm.signal import read_periods

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

TINY = ["--set", "data.n_subjects=6", "--set", "data.hours=1", "--set", "model.family=mlp",
        "--set", "train.batch_size=64", "--set", "protocol.k=3", "--epochs", "3", "--jobs", "1"]


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[train]\nepochz = 3\n")
    with pytest.raises(ConfigError, match="epochz"):
        load_config(p)
    p.write_text("[nope]\nx = 1\n")
    with pytest.raises(ConfigError, match="nope"):
        load_config(p)


def test_seed_env_fallback_and_overrides(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[train]\nepochs = 7\n")
    cfg = load_config(p, env={"ASPM_SEED": "42"})
    assert cfg.seed == 42 and cfg["train"]["epochs"] == 7
    cfg = load_config(p, {"run.seed": "3", "train.epochs": "9"}, env={"ASPM_SEED": "42"})
    assert cfg.seed == 3 and cfg["train"]["epochs"] == 9
    assert cfg.hash() != load_config(p, env={}).hash()


def test_shipped_configs_parse():
    names = sorted(load_config(p, env={}).experiment for p in CONFIGS.glob("*.ini"))
    assert names == ["exp1", "exp2.1", "exp2.2", "exp2.3", "exp2.4", "exp3", "exp4"]


def test_bad_values_rejected():
    with pytest.raises(ConfigError):
        load_config(None, {"run.experiment": "exp9"}, env={})
    with pytest.raises(ConfigError):
        load_config(None, {"protocol.mixed_weight": "1.5"}, env={})
    with pytest.raises(ConfigError):
        load_config(None, {"train.epochs": "many"}, env={})


# ---------------------------------------------------------------------------
# synth and preprocess
# ---------------------------------------------------------------------------

def test_synth_files_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    for d in (a, b):
        code, out, _ = run(["synth", "--out", str(d), "--duration-h", "4", "--ahi", "15",
                            "--seed", "7"], capsys)
        assert code == 0
    files = sorted(p.name for p in a.iterdir())
    assert files == ["synth.low_quality.ann.csv", "synth.low_quality.rec.csv"]
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    # the logged count matches the annotation file
    n = int(out.strip().split("events=")[1])
    ann_rows = read_rows(a / "synth.low_quality.ann.csv")
    assert n == sum(r[2] in ("apnea", "hypopnea") for r in ann_rows) and 40 <= n <= 80


def test_synth_missing_dir(tmp_path, capsys):
    missing = tmp_path / "nowhere"
    code, _, err = run(["synth", "--out", str(missing)], capsys)
    assert code == 1
    assert str(missing) in err


def test_preprocess_bla_and_period_count(tmp_path, capsys):
    run(["synth", "--out", str(tmp_path), "--duration-h", "0.5", "--seed", "2"], capsys)
    rec = tmp_path / "synth.low_quality.rec.csv"
    ann = tmp_path / "synth.low_quality.ann.csv"
    outs = {}
    for mode in ("on", "off"):
        out = tmp_path / f"p_{mode}.csv"
        code, _, _ = run(["preprocess", str(rec), str(ann), "--out", str(out), "--bla", mode],
                         capsys)
        assert code == 0
        outs[mode] = read_periods(out)
    assert len(outs["on"]) == 30
    np.testing.assert_array_equal(outs["on"].y, outs["off"].y)
    assert not np.allclose(outs["on"].x, outs["off"].x)
    assert set(outs["on"].subject_id) == {"synth"}


def test_train_quantize_bench_describe(tmp_path, capsys):
    run(["synth", "--out", str(tmp_path), "--duration-h", "1", "--ahi", "30", "--seed", "3"],
        capsys)
    periods = tmp_path / "p.csv"
    run(["preprocess", str(tmp_path / "synth.low_quality.rec.csv"),
         str(tmp_path / "synth.low_quality.ann.csv"), "--out", str(periods)], capsys)
    model = tmp_path / "m.aspm"
    code, out, _ = run(["train", str(periods), "--out", str(model), "--family", "mlp",
                        "--epochs", "2", "--batch-size", "16", "--seed", "1"], capsys)
    assert code == 0 and model.exists()
    q = tmp_path / "q.aspm"
    code, out, _ = run(["quantize", str(model), "--calibration", str(periods), "--out", str(q)],
                       capsys)
    assert code == 0 and "weight_bytes=" in out
    code, out, _ = run(["bench", str(q), "--n-periods", "20", "--warmup", "1", "--repeats", "1"],
                       capsys)
    assert code == 0 and out.startswith("int8: mean_ms_per_period=")
    code, out, _ = run(["describe", str(model)], capsys)
    assert code == 0 and "magic: ASPM" in out
    code, _, err = run(["quantize", str(q), "--calibration", str(periods), "--out",
                        str(tmp_path / "qq.aspm")], capsys)
    assert code == 1 and "already quantized" in err


def test_describe_bad_file(tmp_path, capsys):
    bad = tmp_path / "bad.aspm"
    bad.write_bytes(b"NOPE1234")
    code, _, err = run(["describe", str(bad)], capsys)
    assert code == 1 and "magic" in err


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def test_run_exp1_summary_and_manifest(tmp_path, capsys):
    out = tmp_path / "exp1"
    code, stdout, _ = run(["run", str(CONFIGS / "exp1.ini"), "--out", str(out), *TINY], capsys)
    assert code == 0
    summary = (out / "summary.txt").read_text()
    assert "kappa" in summary and "±" in summary
    rows = read_rows(out / "fold_metrics.csv")
    assert rows[0][:2] == ["fold", "kappa"] and len(rows) == 1 + 3 + 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["experiment"] == "exp1" and manifest["seed"] == 1
    assert manifest["config"]["train"]["epochs"] == 3
    assert "fold_metrics.csv" in manifest["outputs"] and len(manifest["config_hash"]) == 64
    # existing directory is never overwritten without --force
    code, _, err = run(["run", str(CONFIGS / "exp1.ini"), "--out", str(out), *TINY], capsys)
    assert code == 1 and "--force" in err
    code, _, _ = run(["run", str(CONFIGS / "exp1.ini"), "--out", str(out), "--force", *TINY],
                     capsys)
    assert code == 0


def test_run_exp3_one_row_per_subject(tmp_path, capsys):
    out = tmp_path / "exp3"
    code, _, _ = run(["run", str(CONFIGS / "exp3.ini"), "--out", str(out), *TINY], capsys)
    assert code == 0
    for v in ("C_b", "C_i", "C_c"):
        rows = read_rows(out / f"subject_results_{v}.csv")
        assert len(rows) == 1 + 6
        assert len({r[0] for r in rows[1:]}) == 6
    table = read_rows(out / "threshold_table.csv")
    assert len(table) == 1 + 3 * 3


def test_run_exp4_bench_report(tmp_path, capsys):
    out = tmp_path / "exp4"
    code, stdout, _ = run(["run", str(CONFIGS / "exp4.ini"), "--out", str(out), *TINY,
                           "--set", "bench.n_periods=30", "--set", "bench.repeats=1"], capsys)
    assert code == 0
    bench = (out / "bench.txt").read_text().splitlines()
    assert [line.split(":")[0] for line in bench] == ["float32", "int8"]
    assert all("mean_ms_per_period=" in line for line in bench)
    assert (out / "model_float.aspm").exists() and (out / "model_int8.aspm").exists()
    # timings vary between runs, so they stay out of the hashed CSV outputs
    assert not any(name.endswith(".csv") and "bench" in name
                   for name in json.loads((out / "manifest.json").read_text())["outputs"])


def test_run_seed_from_environment(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nexperiment = exp1\n")
    monkeypatch.setenv("ASPM_SEED", "11")
    code, _, _ = run(["run", str(cfg), "--out", str(tmp_path / "o"), *TINY], capsys)
    assert code == 0
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["seed"] == 11


def test_run_unknown_key_exit_code(tmp_path, capsys):
    code, _, err = run(["run", str(CONFIGS / "exp1.ini"), "--out", str(tmp_path / "x"),
                        "--set", "train.nope=1"], capsys)
    assert code == 1 and "nope" in err
