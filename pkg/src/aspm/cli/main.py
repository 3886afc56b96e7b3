"""``aspm`` command-line entry point."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from .. import __version__
from ..signal import Device, EventKind, PeriodSet, parse_annotation, parse_recording, preprocess
from ..signal import read_periods, write_annotation, write_periods, write_recording
from ..synth import SynthConfig, cohort_configs, device_variant, generate
from .config import SEED_ENV, ConfigError, load_config, output_dir
from .experiments import recording_paths, run_experiment, train_config

log = logging.getLogger("aspm")


class CliError(Exception):
    pass


def _versions() -> dict:
    import numba
    import scipy
    return {"aspm": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _env_seed(flag):
    if flag is not None:
        return flag
    try:
        return int(os.environ.get(SEED_ENV, "0"))
    except ValueError:
        raise CliError(f"{SEED_ENV} must be an integer") from None


def _prepare_out_dir(path: Path, force: bool) -> Path:
    if path.exists() and not force:
        raise CliError(f"output directory {path} already exists; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    if not out.is_dir():
        raise CliError(f"output directory does not exist: {out}")
    seed = _env_seed(args.seed)
    devices = [Device.LOW_QUALITY, Device.HIGH_QUALITY] if args.device == "both" else [Device(args.device)]
    extra = dict(period_aligned=args.period_aligned, artifact_rate=args.artifact_rate)
    if args.cohort:
        bases = cohort_configs(args.cohort, args.duration_h, (args.ahi_min, args.ahi_max),
                               seed=seed, **extra)
    else:
        bases = [SynthConfig(duration=args.duration_h * 3600.0, apnea_rate=args.ahi, seed=seed,
                             subject_id=args.subject, **extra)]
    for base in bases:
        for dev in devices:
            rec, ann = generate(device_variant(base, dev))
            rec_path, ann_path = recording_paths(base.subject_id, dev, out)
            write_recording(rec, rec_path)
            write_annotation(ann, ann_path)
            n_resp = ann.n_respiratory
            n_art = len(ann.of_kind(EventKind.ARTIFACT))
            log.info("%s: %d samples, %d respiratory events, %d artifacts", rec_path.name,
                     len(rec.values), n_resp, n_art)
            print(f"{rec_path} events={n_resp}")
    return 0


def _infer_ids(rec_path: Path, subject, device):
    name = rec_path.name
    for suffix in (".rec.csv", ".csv"):
        if name.endswith(suffix):
            name = name[:-len(suffix)]
            break
    s, _, d = name.rpartition(".")
    if d in (Device.LOW_QUALITY.value, Device.HIGH_QUALITY.value) and s:
        return subject or s, device or d
    return subject or name, device or Device.LOW_QUALITY.value


def cmd_preprocess(args) -> int:
    rec_path = Path(args.recording)
    subject, device = _infer_ids(rec_path, args.subject, args.device)
    rec = parse_recording(rec_path, device, subject, nominal_rate=args.rate)
    ann = parse_annotation(args.annotation, rec.recording_id) if args.annotation else None
    ps = preprocess(rec, ann, bla=args.bla == "on")
    out = Path(args.out)
    if not out.parent.is_dir():
        raise CliError(f"output directory does not exist: {out.parent}")
    write_periods(ps, out)
    n_norm, n_apn = ps.class_counts()
    print(f"{out} periods={len(ps)} normal={n_norm} apneic={n_apn}")
    return 0


def _read_period_files(paths) -> PeriodSet:
    return PeriodSet.concat([read_periods(p) for p in paths])


def cmd_train(args) -> int:
    from ..models import fit_classifier
    from ..evaluation.protocols import balance_majority_subsample
    from ..quant import save, to_float_model
    from ..nn import TrainConfig
    periods = _read_period_files(args.periods)
    if len(periods) == 0:
        raise CliError("no periods to train on")
    seed = _env_seed(args.seed)
    if args.balance:
        periods = balance_majority_subsample(periods, seed)
    cfg = TrainConfig(batch_size=args.batch_size, learning_rate=args.learning_rate,
                      epochs=args.epochs, seed=seed)
    model = fit_classifier(args.family, args.size, periods.x, periods.y, cfg)
    out = Path(args.out)
    save(to_float_model(model), out)
    rep = model.report
    print(f"{out} best_epoch={rep.best_epoch} val_kappa={rep.best_kappa:.4f}")
    return 0


def cmd_quantize(args) -> int:
    from ..quant import load, quantize, save
    model = load(args.model)
    if model.kind != "float":
        raise CliError(f"{args.model} is already quantized")
    cal = _read_period_files(args.calibration)
    if len(cal) == 0:
        raise CliError("calibration set is empty")
    qm = quantize(model, cal.x[:args.max_periods])
    save(qm, args.out)
    print(f"{args.out} weight_bytes={qm.weight_bytes} float_weight_bytes={model.weight_bytes}")
    return 0


def cmd_bench(args) -> int:
    from ..quant import bench_inference, load
    model = load(args.model)
    periods = _read_period_files(args.periods).x if args.periods else None
    res = bench_inference(model, periods, n_periods=args.n_periods, warmup=args.warmup,
                          repeats=args.repeats, seed=_env_seed(args.seed))
    print(f"{model.kind}: mean_ms_per_period={res.mean_ms:.4f} total_ms={res.total_ms:.2f} "
          f"n_periods={res.n_periods}")
    return 0


def cmd_describe(args) -> int:
    from ..quant import describe
    sys.stdout.write(describe(args.model))
    return 0


def cmd_run(args) -> int:
    overrides = dict(kv.split("=", 1) for kv in args.set or [] if "=" in kv)
    if any("=" not in kv for kv in args.set or []):
        raise CliError("--set expects section.key=value")
    for flag, key in ((args.seed, "run.seed"), (args.experiment, "run.experiment"),
                      (args.epochs, "train.epochs")):
        if flag is not None:
            overrides[key] = str(flag)
    cfg = load_config(args.config, overrides)
    out = _prepare_out_dir(output_dir(cfg, args.out), args.force)
    jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    log.info("running %s with seed %d into %s", cfg.experiment, cfg.seed, out)
    files = run_experiment(cfg, out, jobs)
    manifest = {
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "config": cfg.to_json(),
        "config_hash": cfg.hash(),
        "versions": _versions(),
        "outputs": {p.name: _sha256(p) for p in sorted(files)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    summary = out / "summary.txt"
    if summary.exists():
        sys.stdout.write(summary.read_text(encoding="utf-8"))
    bench = out / "bench.txt"
    if bench.exists():
        sys.stdout.write(bench.read_text(encoding="utf-8"))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aspm", description="Sleep-apnea screening pipeline.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate synthetic recordings and annotations")
    s.add_argument("--out", required=True, help="existing output directory")
    s.add_argument("--duration-h", type=float, default=4.0)
    s.add_argument("--ahi", type=float, default=15.0, help="event rate per hour")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--subject", default="synth")
    s.add_argument("--device", choices=["low_quality", "high_quality", "both"], default="low_quality")
    s.add_argument("--cohort", type=int, default=0, help="generate N subjects instead of one")
    s.add_argument("--ahi-min", type=float, default=0.0)
    s.add_argument("--ahi-max", type=float, default=40.0)
    s.add_argument("--artifact-rate", type=float, default=0.0)
    s.add_argument("--period-aligned", action="store_true")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="turn one recording into labeled periods")
    s.add_argument("recording")
    s.add_argument("annotation", nargs="?")
    s.add_argument("--out", required=True, help="period CSV to write")
    s.add_argument("--bla", choices=["on", "off"], default="on")
    s.add_argument("--subject")
    s.add_argument("--device", choices=["low_quality", "high_quality"])
    s.add_argument("--rate", type=float, default=None, help="nominal sample rate in Hz")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train one model on period files and save it")
    s.add_argument("periods", nargs="+")
    s.add_argument("--out", required=True)
    s.add_argument("--family", choices=["mlp", "cnn"], default="cnn")
    s.add_argument("--size", choices=["S", "M", "L"], default="S")
    s.add_argument("--epochs", type=int, default=500)
    s.add_argument("--batch-size", type=int, default=1000)
    s.add_argument("--learning-rate", type=float, default=0.001)
    s.add_argument("--balance", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("run", help="run an experiment from a config file")
    s.add_argument("config", nargs="?", help="INI configuration")
    s.add_argument("--out", help="output directory (overrides [run] output)")
    s.add_argument("--force", action="store_true", help="write into an existing output directory")
    s.add_argument("--jobs", type=int, default=None, help="parallel folds (default: CPU count)")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--experiment", default=None)
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config value; repeatable")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("quantize", help="convert a float model file to int8")
    s.add_argument("model")
    s.add_argument("--calibration", nargs="+", required=True, help="period CSV files")
    s.add_argument("--max-periods", type=int, default=1000)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("bench", help="time single-period inference over one night")
    s.add_argument("model")
    s.add_argument("--periods", nargs="*")
    s.add_argument("--n-periods", type=int, default=480)
    s.add_argument("--warmup", type=int, default=10)
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("describe", help="print a model file's header and tensors")
    s.add_argument("model")
    s.set_defaults(func=cmd_describe)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (CliError, ConfigError, OSError, ValueError) as exc:
        print(f"aspm {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
