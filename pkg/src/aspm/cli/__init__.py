"""Command-line front end: config handling, experiment runners and ``main``."""

from .config import EXPERIMENTS, SCHEMA, ConfigError, RunConfig, load_config
from .experiments import run_experiment
from .main import build_parser, main

__all__ = ["EXPERIMENTS", "SCHEMA", "ConfigError", "RunConfig", "load_config", "run_experiment",
           "build_parser", "main"]
