"""Experiment orchestration and the command-line interface."""

from .config import ExperimentConfig, derive_seed, load_config
from .experiments import (ResultTable, run_benchmark, run_efficiency_accuracy_study,
                          run_knn_decoding, run_neighbor_ablation, run_sharing_study)

__all__ = ["ExperimentConfig", "ResultTable", "derive_seed", "load_config", "run_benchmark",
           "run_efficiency_accuracy_study", "run_knn_decoding", "run_neighbor_ablation",
           "run_sharing_study"]
