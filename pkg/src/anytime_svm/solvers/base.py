"""Training configuration, the SVM model type and the deadline driver."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..dataio import Dataset, SparseVector
from ..kernel import DEFAULT_CACHE_BYTES, KernelParams, expansion_values, rbf

clock = time.perf_counter

# Clock checks happen after at most this many inner updates.
MAX_CHUNK = 64
# Chunks are sized so one chunk takes about this long.
CHUNK_SECONDS = 0.002


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters and stopping rules of one training run.

    ``deadline`` is wall-clock seconds (``math.inf`` for none). ``max_iter``
    caps inner updates when no deadline is given; ``None`` means
    ``max(10**7, 100 n)``.
    """

    C: float = 1.0
    kernel: KernelParams = field(default_factory=lambda: KernelParams(1.0))
    deadline: float = math.inf
    epsilon: float = 1e-3
    seed: int = 0
    budget: int = 2048
    max_epochs: int = 10
    cache_bytes: int = DEFAULT_CACHE_BYTES
    max_iter: int | None = None
    trace: bool = False

    def __post_init__(self):
        if not (self.C > 0 and math.isfinite(self.C)):
            raise ValueError("C must be positive and finite")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.budget < 1:
            raise ValueError("budget must be at least 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if math.isnan(self.deadline) or self.deadline < 0:
            raise ValueError("deadline must be non-negative")

    @classmethod
    def from_log2(cls, log2_C: float, log2_gamma: float, **kw) -> "TrainConfig":
        return cls(C=2.0 ** log2_C, kernel=KernelParams(2.0 ** log2_gamma), **kw)

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)

    def iteration_cap(self, n: int) -> int:
        if self.max_iter is not None:
            return self.max_iter
        return max(10_000_000, 100 * n)


@dataclass
class SvmModel:
    """Kernel expansion ``f(x) = sum_i coef_i k(sv_i, x) + bias``."""

    sv: np.ndarray
    coef: np.ndarray
    bias: float
    kernel: KernelParams
    C: float = 1.0
    solver: str = ""
    iterations: int = 0
    elapsed: float = 0.0
    dual_objective: float | None = None
    converged: bool = False
    trace: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.coef = np.ascontiguousarray(self.coef, dtype=np.float64).reshape(-1)
        sv = np.ascontiguousarray(self.sv, dtype=np.float64)
        if sv.ndim != 2:
            sv = sv.reshape(len(self.coef), -1)
        if sv.shape[0] != len(self.coef):
            raise ValueError("support vectors and coefficients differ in length")
        self.sv = sv

    @property
    def n_support(self) -> int:
        return len(self.coef)

    @property
    def dimension(self) -> int:
        return self.sv.shape[1]

    @property
    def support_vectors(self) -> list[SparseVector]:
        return [SparseVector.from_dense(r) for r in self.sv]

    @property
    def coefficients(self) -> list[float]:
        return [float(c) for c in self.coef]

    def summary(self) -> dict:
        return {
            "solver": self.solver,
            "C": self.C,
            "gamma": self.kernel.gamma,
            "n_support": self.n_support,
            "iterations": self.iterations,
            "elapsed": self.elapsed,
            "objective": self.dual_objective,
            "converged": self.converged,
        }

    # persistence ---------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "solver": self.solver,
            "gamma": self.kernel.gamma,
            "C": self.C,
            "bias": self.bias,
            "dimension": self.dimension,
            "meta": {
                "iterations": self.iterations,
                "elapsed": self.elapsed,
                "dual_objective": self.dual_objective,
                "converged": self.converged,
            },
            "support": [
                {"coef": float(c), "indices": list(v.indices), "values": list(v.values)}
                for c, v in zip(self.coef, self.support_vectors)
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SvmModel":
        dim = int(obj.get("dimension", 0))
        vecs = [SparseVector(tuple(s["indices"]), tuple(s["values"])) for s in obj["support"]]
        dim = max([dim] + [v.max_index for v in vecs])
        sv = np.array([v.to_dense(dim) for v in vecs]).reshape(len(vecs), dim)
        meta = obj.get("meta", {})
        return cls(sv=sv, coef=np.array([s["coef"] for s in obj["support"]], dtype=np.float64),
                   bias=float(obj["bias"]), kernel=KernelParams(float(obj["gamma"])),
                   C=float(obj["C"]), solver=obj.get("solver", ""),
                   iterations=int(meta.get("iterations", 0)),
                   elapsed=float(meta.get("elapsed", 0.0)),
                   dual_objective=meta.get("dual_objective"),
                   converged=bool(meta.get("converged", False)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SvmModel":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def zero_model(solver: str, cfg: TrainConfig, dimension: int, elapsed: float = 0.0) -> SvmModel:
    return SvmModel(np.zeros((0, dimension)), np.zeros(0), 0.0, cfg.kernel, cfg.C,
                    solver=solver, elapsed=elapsed, dual_objective=0.0, converged=False)


# ---------------------------------------------------------------------------
# prediction


def decision_value(m: SvmModel, x: SparseVector) -> float:
    total = 0.0
    for c, v in zip(m.coef, m.support_vectors):
        total += c * rbf(v, x, m.kernel)
    return total + m.bias


def _aligned(m: SvmModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sv, X = m.sv, np.ascontiguousarray(X, dtype=np.float64)
    d = max(sv.shape[1], X.shape[1])
    if sv.shape[1] < d:
        sv = np.hstack([sv, np.zeros((sv.shape[0], d - sv.shape[1]))])
    if X.shape[1] < d:
        X = np.hstack([X, np.zeros((X.shape[0], d - X.shape[1]))])
    return sv, X


def decision_function(m: SvmModel, X: np.ndarray) -> np.ndarray:
    sv, X = _aligned(m, X)
    out = np.empty(X.shape[0])
    expansion_values(sv, m.coef, float(m.bias), m.kernel.gamma, X, out)
    return out


def predict(m: SvmModel, X: np.ndarray) -> np.ndarray:
    return np.where(decision_function(m, X) >= 0, 1.0, -1.0)


def validation_error(m: SvmModel, ds: Dataset) -> float:
    if len(ds) == 0:
        raise ValueError("empty dataset")
    return float(np.mean(predict(m, ds.X) != ds.y))


# ---------------------------------------------------------------------------
# deadline driver


def run_anytime(step, deadline: float, start: float, cap: int, on_chunk=None) -> tuple[int, bool]:
    """Call ``step(k) -> (updates_done, finished)`` until done or out of time.

    Chunks are sized from the measured per-update cost so that the clock is
    read at least every :data:`MAX_CHUNK` updates and roughly every
    :data:`CHUNK_SECONDS`; a chunk never starts after the deadline has passed.
    Returns ``(total_updates, finished)``.
    """
    total = 0
    if math.isinf(deadline) and on_chunk is None:
        while total < cap:
            done, finished = step(min(cap - total, 1 << 20))
            total += done
            if finished:
                return total, True
        return total, False

    end = start + deadline
    per_update = None
    k = 1
    while total < cap:
        now = clock()
        remaining = end - now
        if remaining <= 0:
            return total, False
        if per_update is not None:
            budget = min(CHUNK_SECONDS, remaining)
            k = int(max(1, min(MAX_CHUNK, budget / per_update)))
        k = min(k, cap - total)
        done, finished = step(k)
        dt = clock() - now
        total += done
        if done:
            per_update = max(dt / done, 1e-9)
        if on_chunk is not None:
            on_chunk(clock() - start)
        if finished:
            return total, True
    return total, False
