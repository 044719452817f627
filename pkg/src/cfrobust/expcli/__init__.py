"""Experiment orchestration: configs, training runs, sweeps, reports and the CLI."""
from .config import ExperimentConfig, load_config, save_config
from .runner import (
    EVAL_SPLITS,
    RunRecord,
    TrainingDiverged,
    load_dataset_dir,
    prepare_data,
    run_experiment,
    subsample_balanced,
    train_one,
)
from .tools import augment_offline, parse_recipe, report, summarize, sweep

__all__ = [
    "EVAL_SPLITS", "ExperimentConfig", "RunRecord", "TrainingDiverged", "augment_offline", "load_config",
    "load_dataset_dir", "parse_recipe", "prepare_data", "report", "run_experiment", "save_config",
    "subsample_balanced", "summarize", "sweep", "train_one",
]
