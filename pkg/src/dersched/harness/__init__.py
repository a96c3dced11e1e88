"""Data ingestion, scenario runs, studies, results and the CLI."""
from .data import TraceError, calibrate_fleet, load_trace, synthetic_trace
from .results import emit_results
from .scenario import (GapReport, GapRow, ScenarioSpec, inject_noise, load_config,
                       noise_study, run_scenario, summarize, sweep, timing_benchmark)

__all__ = [
    "TraceError",
    "calibrate_fleet",
    "load_trace",
    "synthetic_trace",
    "emit_results",
    "GapReport",
    "GapRow",
    "ScenarioSpec",
    "inject_noise",
    "load_config",
    "noise_study",
    "run_scenario",
    "summarize",
    "sweep",
    "timing_benchmark",
]
