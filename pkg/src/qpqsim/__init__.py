"""Simulation of two quantum private query protocols and their attacks."""

from .harness import ConfigError, ExperimentConfig, ExperimentReport, run_scenario, summarize

__all__ = ["ConfigError", "ExperimentConfig", "ExperimentReport", "run_scenario", "summarize"]
__version__ = "0.1.0"
