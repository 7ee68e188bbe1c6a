"""Experiment presets, orchestration and CLI."""

from .experiments import (RunReport, load_mnist, mnist_available,
                          prepare_datasets, run_experiment)
from .presets import PRESET_NAMES, ExperimentConfig, preset

__all__ = ["RunReport", "load_mnist", "mnist_available", "prepare_datasets",
           "run_experiment", "PRESET_NAMES", "ExperimentConfig", "preset"]
