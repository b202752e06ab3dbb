"""Experiment orchestration: configs, presets, the per-seed pipeline and report emission."""
from .config import (ConfigError, DataConfig, ExperimentConfig, SplitConfig, dump_config, load_config,
                     parse_config, stage_seed)
from .presets import PRESETS, preset
from .report import emit_report, emit_sweep, load_bundle
from .runner import Pipeline, ReportBundle, run_experiment

__all__ = [
    "ConfigError", "DataConfig", "ExperimentConfig", "SplitConfig", "dump_config", "load_config",
    "parse_config", "stage_seed", "PRESETS", "preset", "emit_report", "emit_sweep", "load_bundle",
    "Pipeline", "ReportBundle", "run_experiment",
]
