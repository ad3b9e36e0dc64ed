"""Capsule-network + LSTM multi-step forecaster on a small numpy autodiff core."""

from .numcore import GradTape, ParameterSet, Prng, Tensor, finite_difference_gradient
from .model import ArchSpec, Checkpoint, build_model, count_parameters, load_checkpoint, model_forward, save_checkpoint
from .data import NormParams, PriceSeries, WindowedDataset, build_dataset, load_csv, synth_series
from .train import TrainConfig, train
from .metrics import MetricsReport, compute_metrics, evaluate_model

__all__ = [
    "GradTape", "ParameterSet", "Prng", "Tensor", "finite_difference_gradient",
    "ArchSpec", "Checkpoint", "build_model", "count_parameters", "load_checkpoint",
    "model_forward", "save_checkpoint",
    "NormParams", "PriceSeries", "WindowedDataset", "build_dataset", "load_csv", "synth_series",
    "TrainConfig", "train",
    "MetricsReport", "compute_metrics", "evaluate_model",
]

__version__ = "0.1.0"
