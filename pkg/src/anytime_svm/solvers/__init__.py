"""Anytime SVM solvers sharing one configuration and model type."""

from __future__ import annotations

from ..dataio import Dataset
from .base import (SvmModel, TrainConfig, TrainingError, decision_function,
                   decision_value, predict, validation_error, zero_model)
from .bsgd import train_bsgd
from .lasvm import train_lasvm
from .smo import train_smo

SOLVERS = {
    "smo": train_smo,
    "lasvm": train_lasvm,
    "bsgd": train_bsgd,
}


def get_solver(name: str):
    try:
        return SOLVERS[name]
    except KeyError:
        raise ValueError(f"unknown solver {name!r}; choose from {', '.join(SOLVERS)}") from None


def train(solver: str, data: Dataset, cfg: TrainConfig) -> SvmModel:
    return get_solver(solver)(data, cfg)


def warmup() -> None:
    """Compile every solver kernel so later deadlines are not charged for JIT."""
    import numpy as np

    X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    ds = Dataset(X, np.array([1.0, -1.0, -1.0, 1.0]), "warmup")
    cfg = TrainConfig(budget=2)
    for fn in SOLVERS.values():
        m = fn(ds, cfg)
        validation_error(m, ds)
        fn(ds, cfg.with_(deadline=1.0, trace=True))


__all__ = [
    "SOLVERS", "SvmModel", "TrainConfig", "TrainingError", "decision_function",
    "decision_value", "get_solver", "predict", "train", "train_bsgd", "train_lasvm",
    "train_smo", "validation_error", "warmup", "zero_model",
]
