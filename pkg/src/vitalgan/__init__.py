"""Conditional WGAN-GP proxy datasets for short multichannel vital-sign series."""

from .checkpoint import CheckpointBundle
from .data import CHANNELS, LabeledDataset, PatientSeries
from .evaluation import ClassifierConfig, HPOSpace, MetricsReport
from .gan import ArchitectureConfig, TrainConfig
from .tensor import Tensor, grad

__version__ = "0.1.0"

__all__ = [
    "ArchitectureConfig",
    "CHANNELS",
    "CheckpointBundle",
    "ClassifierConfig",
    "HPOSpace",
    "LabeledDataset",
    "MetricsReport",
    "PatientSeries",
    "Tensor",
    "TrainConfig",
    "grad",
]
