"""Replication engine and CLI for the shipped experiments."""

from .config import ConfigError, ExperimentConfig, MethodConfig, load_config, parse_config
from .errors import HarnessError
from .report import load_bundle, summarize_bundle, write_outputs
from .runner import pilot_covariance, resolve_threads, run_experiment

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "HarnessError",
    "MethodConfig",
    "load_bundle",
    "load_config",
    "parse_config",
    "pilot_covariance",
    "resolve_threads",
    "run_experiment",
    "summarize_bundle",
    "write_outputs",
]
