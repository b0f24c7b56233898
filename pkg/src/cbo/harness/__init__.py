"""Experiment configuration, presets and the archive-writing runner."""

from .config import ExperimentConfig, MeanFieldSettings, Mode, dump_config, load_config, parse_config
from .presets import describe_preset, list_presets, preset_config
from .runner import ResultArchive, run_experiment, run_meanfield, run_sweep

__all__ = [
    "ExperimentConfig",
    "MeanFieldSettings",
    "Mode",
    "ResultArchive",
    "describe_preset",
    "dump_config",
    "list_presets",
    "load_config",
    "parse_config",
    "preset_config",
    "run_experiment",
    "run_meanfield",
    "run_sweep",
]
