"""Deadline-limited kernel SVM solvers and EGO hyperparameter tuning."""

from .dataio import Dataset, SparseVector, SplitSpec, load_libsvm, make_synthetic, split
from .harness import ExperimentConfig, run_experiment, time_limit_heuristic
from .kernel import KernelParams
from .solvers import SvmModel, TrainConfig, predict, train
from .surrogate import HyperPoint
from .tuner import TuneConfig, TuneResult, ego_tune, grid_search

__version__ = "0.1.0"

__all__ = [
    "Dataset", "ExperimentConfig", "HyperPoint", "KernelParams", "SparseVector",
    "SplitSpec", "SvmModel", "TrainConfig", "TuneConfig", "TuneResult", "ego_tune",
    "grid_search", "load_libsvm", "make_synthetic", "predict", "run_experiment",
    "split", "time_limit_heuristic", "train",
]
