"""Experiment driver: configs, pipeline runs, comparison metrics and the CLI."""

from .config import RunConfig, echo_config, load_config, parse_config
from .run import Context, RunManifest, run

__all__ = ["Context", "RunConfig", "RunManifest", "echo_config", "load_config", "parse_config", "run"]
