"""Experiment runner and CLI."""
from .config import ConfigError, ExperimentConfig, load_config
from .runner import run_experiment
from .tables import emit_tables

__all__ = ["ConfigError", "ExperimentConfig", "emit_tables", "load_config", "run_experiment"]
