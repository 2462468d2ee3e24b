"""Experiment engine: configs, optimisers, schedules, synthetic tasks, training loop."""

from .config import (
    ExperimentConfig,
    InterventionPlan,
    OptimizerConfig,
    ProbeConfig,
    SchedulePlan,
    TaskConfig,
    config_from_dict,
    config_to_dict,
    load_config,
    dump_config,
)
from .optim import Optimizer, optimizer_step
from .schedule import lr_at
from .tasks import Dataset, make_task
from .train import ExperimentResult, MetricRecord, run_experiment
from .sweep import grid_sweep

__all__ = [
    "Dataset",
    "ExperimentConfig",
    "ExperimentResult",
    "InterventionPlan",
    "MetricRecord",
    "Optimizer",
    "OptimizerConfig",
    "ProbeConfig",
    "SchedulePlan",
    "TaskConfig",
    "config_from_dict",
    "config_to_dict",
    "dump_config",
    "grid_sweep",
    "load_config",
    "lr_at",
    "make_task",
    "optimizer_step",
    "run_experiment",
]
