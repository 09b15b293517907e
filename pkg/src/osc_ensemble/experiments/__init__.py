"""Scenario configs, the pipeline runner and the command line interface."""

from .config import ConfigError, ScenarioConfig
from .runner import compare_report, run_scenario

__all__ = ["ConfigError", "ScenarioConfig", "compare_report", "run_scenario"]
