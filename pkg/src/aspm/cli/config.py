"""INI run configuration with a fixed schema.

Every key has a type and a default; unknown sections or keys are errors.
Values resolve in the order default < config file < command-line override,
and the seed falls back to the ``ASPM_SEED`` environment variable.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

EXPERIMENTS = ("exp1", "exp2.1", "exp2.2", "exp2.3", "exp2.4", "exp3", "exp4")
SEED_ENV = "ASPM_SEED"


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text: str):
    t = text.strip()
    return None if t in ("", "none") else int(t)


def _str_list(text: str) -> tuple:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def _float_list(text: str) -> tuple:
    return tuple(float(p) for p in _str_list(text))


# section -> key -> (parser, default)
SCHEMA = {
    "run": {
        "experiment": (str, "exp1"),
        "seed": (_opt_int, None),
        "output": (str, ""),
        "save_models": (_bool, False),
    },
    "data": {
        "source": (str, "synth"),
        "path": (str, ""),
        "n_subjects": (int, 20),
        "hours": (float, 4.0),
        "ahi_min": (float, 0.0),
        "ahi_max": (float, 40.0),
        "quality": (str, "low_quality"),
        "bla": (_bool, True),
        "artifact_threshold": (float, 0.2),
        "artifact_rate": (float, 0.0),
        "period_aligned": (_bool, False),
    },
    "model": {
        "family": (str, "cnn"),
        "size": (str, "S"),
    },
    "train": {
        "batch_size": (int, 1000),
        "learning_rate": (float, 0.001),
        "epochs": (int, 500),
        "validation_fraction": (float, 0.3),
    },
    "protocol": {
        "k": (int, 10),
        "balance": (_bool, True),
        "mixed_weight": (float, 1.0),
        "finetune_epochs": (_opt_int, None),
        "variants": (_str_list, ("C_b", "C_i", "C_c")),
        "thresholds": (_float_list, (5.0, 15.0, 30.0)),
        "test_fraction": (float, 0.2),
    },
    "bench": {
        "n_periods": (int, 480),
        "warmup": (int, 10),
        "repeats": (int, 3),
        "calibration_periods": (int, 1000),
    },
}


@dataclass(frozen=True)
class RunConfig:
    values: dict            # section -> key -> parsed value

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def experiment(self) -> str:
        return self.values["run"]["experiment"]

    def to_json(self) -> dict:
        return {s: {k: list(v) if isinstance(v, tuple) else v for k, v in kv.items()}
                for s, kv in self.values.items()}

    def hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _parse_value(section: str, key: str, text: str):
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    parser = SCHEMA[section][key][0]
    try:
        return parser(text)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None


def load_config(path=None, overrides: dict | None = None, env=None) -> RunConfig:
    """Resolve a run configuration.

    Parameters
    ----------
    path : path-like, optional
        INI file.  Missing keys take their defaults.
    overrides : dict, optional
        ``{"section.key": text}`` pairs applied after the file.
    env : mapping, optional
        Environment used for the seed fallback (defaults to ``os.environ``).
    """
    values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in cp.sections():
            for key, text in cp.items(section):
                values.setdefault(section, {})[key] = _parse_value(section, key, text)
    for dotted, text in (overrides or {}).items():
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        section, key = dotted.split(".", 1)
        values[section][key] = _parse_value(section, key, str(text))
    env = os.environ if env is None else env
    if values["run"]["seed"] is None:
        try:
            values["run"]["seed"] = int(env.get(SEED_ENV, "0"))
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    cfg = RunConfig(values)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {cfg.experiment!r}")
    data, model = cfg["data"], cfg["model"]
    if data["source"] not in ("synth", "files"):
        raise ConfigError("[data] source must be 'synth' or 'files'")
    if data["source"] == "files" and not data["path"]:
        raise ConfigError("[data] path is required when source = files")
    if data["quality"] not in ("low_quality", "high_quality"):
        raise ConfigError("[data] quality must be low_quality or high_quality")
    if model["family"] not in ("mlp", "cnn", "rf"):
        raise ConfigError("[model] family must be mlp, cnn or rf")
    if model["size"].upper() not in ("S", "M", "L"):
        raise ConfigError("[model] size must be S, M or L")
    if model["family"] == "rf" and cfg.experiment in ("exp2.1", "exp2.2", "exp2.3", "exp2.4", "exp4"):
        raise ConfigError(f"{cfg.experiment} needs a neural model (mlp or cnn)")
    if not 0.0 <= cfg["protocol"]["mixed_weight"] <= 1.0:
        raise ConfigError("[protocol] mixed_weight must lie in [0, 1]")
    if not 0.0 < cfg["protocol"]["test_fraction"] < 1.0:
        raise ConfigError("[protocol] test_fraction must lie in (0, 1)")
    for v in cfg["protocol"]["variants"]:
        if v not in ("C_b", "C_i", "C_c"):
            raise ConfigError(f"[protocol] unknown variant {v!r}")


def output_dir(cfg: RunConfig, flag: str | None) -> Path:
    out = flag or cfg["run"]["output"]
    if not out:
        raise ConfigError("no output directory: set [run] output or pass --out")
    return Path(out)
