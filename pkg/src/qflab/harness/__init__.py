"""Experiment front door for data and runs."""
from .config import ConfigError, ExperimentConfig, config_from_dict, load_config
from .data import (
    Dataset,
    IngestionError,
    PartitionSpec,
    label_tv_distances,
    load_csv,
    partition_dataset,
    synth_dataset,
)
from .metrics import Metrics, accuracy, evaluate, recall, roc_auc
from .runner import execute, run_experiment

__all__ = [
    "ConfigError", "ExperimentConfig", "config_from_dict", "load_config", "Dataset",
    "IngestionError", "PartitionSpec", "label_tv_distances", "load_csv", "partition_dataset",
    "synth_dataset", "Metrics", "accuracy", "evaluate", "recall", "roc_auc", "execute",
    "run_experiment",
]
