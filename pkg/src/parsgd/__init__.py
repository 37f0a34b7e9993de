"""Parallel SGD for linear models: synchronous, Hogwild, and a warp simulator."""

from ._backend import BACKEND
from .dataset import Dataset, Layout, assign, convert_layout, load, parse_libsvm
from .glm import DivergenceError, Hyperparams, LossTrace, Task, dataset_loss

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Dataset",
    "DivergenceError",
    "Hyperparams",
    "Layout",
    "LossTrace",
    "Task",
    "assign",
    "convert_layout",
    "dataset_loss",
    "load",
    "parse_libsvm",
]
