"""Scenario configuration, experiment runners, and report emission."""

from .config import ConfigError, RadioSettings, ScenarioConfig, parse_config
from .experiment import (
    RunResult,
    SweepResult,
    SweepRow,
    run_experiment,
    run_paired,
    run_sweep,
    sweep_axes,
)
from .plots import render_plots
from .report import RUNS_CSV_COLUMNS, config_echo, emit_report

__all__ = [
    "ConfigError",
    "RadioSettings",
    "RUNS_CSV_COLUMNS",
    "RunResult",
    "ScenarioConfig",
    "SweepResult",
    "SweepRow",
    "config_echo",
    "emit_report",
    "parse_config",
    "render_plots",
    "run_experiment",
    "run_paired",
    "run_sweep",
    "sweep_axes",
]
