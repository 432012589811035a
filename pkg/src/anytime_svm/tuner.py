"""EGO with batch lambda-LCB proposals, the grid-search baseline, and bookkeeping."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from .dataio import Dataset
from .solvers import SvmModel, TrainConfig, get_solver, predict
from .solvers.base import clock
from .surrogate import HIGH, LOW, HyperPoint, Surrogate, fit, to_unit

log = logging.getLogger(__name__)

LHS_DRAWS = 100
N_STARTS = 16
N_CANDIDATES = 1024
DEDUP_DIST = 1e-3
JITTER_RADIUS = 1e-2
FAILURE_VALUE = 1.0
HISTORY_COLUMNS = ("iter", "log2C", "log2gamma", "error", "train_s", "validate_s", "failed")


class TuningError(RuntimeError):
    pass


@dataclass
class EvalRecord:
    point: HyperPoint
    validation_error: float | None
    train_seconds: float = 0.0
    validate_seconds: float = 0.0
    solver: str = ""
    deadline_used: float = math.inf
    iteration: int = 0
    index: int = 0
    seed: int = 0
    iterations: int = 0
    n_support: int = 0
    converged: bool = False

    @property
    def failed(self) -> bool:
        return self.validation_error is None

    def surrogate_value(self, failure_value: float = FAILURE_VALUE) -> float:
        return failure_value if self.failed else self.validation_error

    def to_json(self) -> dict:
        d = asdict(self)
        d["point"] = [self.point.log2_C, self.point.log2_gamma]
        d["deadline_used"] = _num(self.deadline_used)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "EvalRecord":
        d = dict(d)
        d["point"] = HyperPoint(*d["point"])
        d["deadline_used"] = _unnum(d["deadline_used"])
        return cls(**d)


def _num(x):
    return "inf" if isinstance(x, float) and math.isinf(x) else x


def _unnum(x):
    return math.inf if x == "inf" else x


@dataclass
class TuneConfig:
    """EGO budget and evaluation settings.

    ``lambda_mean`` parametrises the Exponential distribution the LCB
    weights are drawn from.
    """

    initial_design_size: int = 20
    iterations: int = 10
    batch_size: int = 20
    lambda_mean: float = 1.0
    seed: int = 0
    solver: str = "lasvm"
    deadline: float = math.inf
    budget: int = 2048
    workers: int = 1

    def __post_init__(self):
        if self.initial_design_size < 2:
            raise ValueError("initial design needs at least two points")
        if self.iterations < 0 or self.batch_size < 1:
            raise ValueError("iterations must be >= 0 and batch_size >= 1")
        if not self.lambda_mean > 0:
            raise ValueError("lambda_mean must be positive")
        get_solver(self.solver)

    def sample_lambdas(self, rng: np.random.Generator, k: int) -> np.ndarray:
        return rng.exponential(self.lambda_mean, size=k)


@dataclass
class TuneResult:
    best_point: HyperPoint
    best_error: float
    history: list[EvalRecord] = field(default_factory=list)
    total_tune_seconds: float = 0.0
    wall_seconds: float = 0.0

    @property
    def best_record(self) -> EvalRecord:
        """The evaluation that produced ``best_point`` (first one on ties)."""
        for r in self.history:
            if not r.failed and r.point == self.best_point and r.validation_error == self.best_error:
                return r
        raise LookupError("best point not found in history")

    @property
    def overhead_seconds(self) -> float:
        """Wall time not spent training or validating (surrogate fits etc.)."""
        return max(0.0, self.wall_seconds - self.total_tune_seconds)

    def to_json(self) -> dict:
        return {
            "best_point": [self.best_point.log2_C, self.best_point.log2_gamma],
            "best_error": self.best_error,
            "total_tune_seconds": self.total_tune_seconds,
            "wall_seconds": self.wall_seconds,
            "history": [r.to_json() for r in self.history],
        }

    @classmethod
    def from_json(cls, d: dict) -> "TuneResult":
        return cls(HyperPoint(*d["best_point"]), d["best_error"],
                   [EvalRecord.from_json(r) for r in d["history"]],
                   d["total_tune_seconds"], d["wall_seconds"])

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in self.history:
            w.writerow([r.iteration, repr(r.point.log2_C), repr(r.point.log2_gamma),
                        "" if r.failed else repr(r.validation_error),
                        repr(r.train_seconds), repr(r.validate_seconds), int(r.failed)])
        return buf.getvalue()

    def deterministic_view(self) -> dict:
        """Everything except timings; equal across reruns with the same seed."""
        return {
            "best_point": (self.best_point.log2_C, self.best_point.log2_gamma),
            "best_error": self.best_error,
            "history": [(r.point.log2_C, r.point.log2_gamma, r.validation_error,
                         r.iteration, r.index, r.seed) for r in self.history],
        }


# ---------------------------------------------------------------------------
# design and proposals


def initial_design(k: int, seed: int) -> list[HyperPoint]:
    """Maximin Latin hypercube: best of 100 random LHS draws by min distance."""
    if k < 2:
        raise ValueError("initial design needs k >= 2")
    rng = np.random.default_rng(seed)
    best, best_d = None, -1.0
    for _ in range(LHS_DRAWS):
        U = qmc.LatinHypercube(d=2, seed=rng).random(k)
        d = np.min(_pairwise(U)[np.triu_indices(k, 1)])
        if d > best_d:
            best, best_d = U, d
    return [HyperPoint.from_unit(u) for u in best]


def _pairwise(U):
    return np.sqrt(np.sum((U[:, None, :] - U[None, :, :]) ** 2, axis=-1))


_DIRS = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])


def minimize_lcb(s: Surrogate, lams: np.ndarray, rng: np.random.Generator,
                 n_starts: int = N_STARTS, tol: float = 1e-3) -> np.ndarray:
    """Minimise ``mu - lam * sd`` over the unit square for each ``lam``.

    Starts are the ``n_starts`` best of a shared random candidate sample;
    every start is refined by a compass (coordinate) search whose step
    halves on failure. All starts of all lambdas move in one vectorised loop.
    Returns the argmins, shape ``(len(lams), 2)``.
    """
    lams = np.asarray(lams, dtype=float)
    cand = rng.uniform(size=(N_CANDIDATES, 2))
    mu, sd = s.predict_unit(cand)
    starts, lamp = [], []
    for lam in lams:
        vals = mu - lam * sd
        starts.append(cand[np.argsort(vals, kind="stable")[:n_starts]])
        lamp.append(np.full(n_starts, lam))
    X = np.vstack(starts)
    lamp = np.concatenate(lamp)
    m0, s0 = s.predict_unit(X)
    f = m0 - lamp * s0
    h = np.full(len(X), 1.0 / 32)
    active = np.ones(len(X), dtype=bool)
    for _ in range(500):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        nb = np.clip(X[idx, None, :] + h[idx, None, None] * _DIRS[None], 0.0, 1.0)
        mu_n, sd_n = s.predict_unit(nb.reshape(-1, 2))
        fn = (mu_n - np.repeat(lamp[idx], 4) * sd_n).reshape(-1, 4)
        best = np.argmin(fn, axis=1)
        fbest = fn[np.arange(len(idx)), best]
        move = fbest < f[idx]
        mi = idx[move]
        X[mi] = nb[np.flatnonzero(move), best[move]]
        f[mi] = fbest[move]
        si = idx[~move]
        h[si] *= 0.5
        active[si] = h[si] >= tol
    out = np.empty((len(lams), 2))
    for q in range(len(lams)):
        block = slice(q * n_starts, (q + 1) * n_starts)
        out[q] = X[block][np.argmin(f[block])]
    return out


def _too_close(u, others: np.ndarray) -> bool:
    if len(others) == 0:
        return False
    return bool(np.min(np.sqrt(np.sum((others - u) ** 2, axis=1))) < DEDUP_DIST)


def _jitter(u, rng):
    r = JITTER_RADIUS * math.sqrt(rng.uniform())
    phi = rng.uniform(0, 2 * math.pi)
    return np.clip(u + r * np.array([math.cos(phi), math.sin(phi)]), 0.0, 1.0)


def propose_batch(s: Surrogate, cfg: TuneConfig, rng: np.random.Generator,
                  deduplicate: bool = True) -> list[HyperPoint]:
    """Batch of ``cfg.batch_size`` proposals, one per sampled LCB weight.

    A proposal within 1e-3 (unit-square distance) of the design or of an
    earlier proposal gets one fresh lambda; if that lands too close as well,
    it is jittered uniformly inside a 1e-2 disc.
    """
    lams = cfg.sample_lambdas(rng, cfg.batch_size)
    U = minimize_lcb(s, lams, rng)
    if not deduplicate:
        return [HyperPoint.from_unit(u) for u in U]
    design = np.array(s.design, dtype=float).reshape(-1, 2)
    taken = design
    clash = []
    for q, u in enumerate(U):
        if _too_close(u, taken):
            clash.append(q)
        else:
            taken = np.vstack([taken, u])
    if clash:
        # one fresh lambda per clashing proposal, optimised together
        U[clash] = minimize_lcb(s, cfg.sample_lambdas(rng, len(clash)), rng)
        for q in clash:
            u = U[q]
            for _ in range(100):
                if not _too_close(u, taken):
                    break
                u = _jitter(U[q], rng)
            U[q] = u
            taken = np.vstack([taken, u])
    return [HyperPoint.from_unit(u) for u in U]


# ---------------------------------------------------------------------------
# evaluation


def eval_seed(master: int, index: int) -> int:
    """Independent per-evaluation seed derived from the master seed and index."""
    return int(np.random.SeedSequence([int(master) & (2**63 - 1), index]).generate_state(1)[0])


def is_degenerate(pred: np.ndarray, labels: np.ndarray, error: float) -> bool:
    """Single-class prediction that does no better than the majority rule."""
    if len(np.unique(pred)) > 1:
        return False
    pos = float(np.mean(labels > 0))
    majority_error = min(pos, 1.0 - pos)
    return error >= majority_error


def evaluate_svm(train: Dataset, validation: Dataset, point: HyperPoint, solver: str,
                 deadline: float, seed: int, budget: int = 2048, iteration: int = 0,
                 index: int = 0) -> EvalRecord:
    cfg = TrainConfig.from_log2(point.log2_C, point.log2_gamma, deadline=deadline,
                                seed=seed, budget=budget)
    fn = get_solver(solver)
    t0 = clock()
    model = fn(train, cfg)
    t1 = clock()
    pred = predict(model, validation.X)
    err = float(np.mean(pred != validation.y))
    t2 = clock()
    return EvalRecord(point, None if is_degenerate(pred, validation.y, err) else err,
                      t1 - t0, t2 - t1, solver, deadline, iteration, index, seed,
                      model.iterations, model.n_support, model.converged)


Objective = Callable[[HyperPoint, int, int], EvalRecord]


def _evaluate_all(objective: Objective, points, iteration, start_index, workers):
    jobs = [(p, iteration, start_index + q) for q, p in enumerate(points)]
    if workers <= 1:
        return [objective(*j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda j: objective(*j), jobs))


def _best(history: Sequence[EvalRecord]) -> EvalRecord:
    ok = [r for r in history if not r.failed]
    if not ok:
        raise TuningError("every evaluation failed")
    return min(ok, key=lambda r: r.validation_error)


def ego_minimize(objective: Objective, cfg: TuneConfig,
                 failure_value: float = FAILURE_VALUE) -> TuneResult:
    """Generic EGO loop over the box; ``objective(point, iteration, index)``."""
    start = clock()
    rng = np.random.default_rng(cfg.seed)
    design = initial_design(cfg.initial_design_size, int(rng.integers(2**31)))
    history = _evaluate_all(objective, design, 0, 0, cfg.workers)
    if all(r.failed for r in history):
        raise TuningError("all initial-design evaluations failed")
    for it in range(1, cfg.iterations + 1):
        s = fit([(r.point, r.surrogate_value(failure_value)) for r in history])
        batch = propose_batch(s, cfg, rng)
        history += _evaluate_all(objective, batch, it, len(history), cfg.workers)
        log.debug("iteration %d: best %.4f", it, _best(history).validation_error)
    best = _best(history)
    return TuneResult(best.point, best.validation_error, history,
                      sum(r.train_seconds + r.validate_seconds for r in history),
                      clock() - start)


def ego_tune(train: Dataset, validation: Dataset, cfg: TuneConfig) -> TuneResult:
    """EGO over (log2 C, log2 gamma) with deadline-limited SVM training."""

    def objective(point, iteration, index):
        return evaluate_svm(train, validation, point, cfg.solver, cfg.deadline,
                            eval_seed(cfg.seed, index), cfg.budget, iteration, index)

    return ego_minimize(objective, cfg)


def log_grid(k: int = 11, low: float = LOW, high: float = HIGH) -> list[float]:
    if k < 1:
        raise ValueError("grid size must be >= 1")
    if k == 1:
        return [(low + high) / 2.0]  # box centre rather than a corner
    return [float(v) for v in np.linspace(low, high, k)]


def grid_search(train: Dataset, validation: Dataset, log2_C: Sequence[float],
                log2_gamma: Sequence[float], solver: str = "smo",
                deadline: float = math.inf, seed: int = 0, budget: int = 2048) -> TuneResult:
    """Evaluate every grid point; argmin of validation error.

    Ties go to the cheaper run by inner-update count, then to the
    lexicographically smaller point.
    """
    if not log2_C or not log2_gamma:
        raise ValueError("grid must be non-empty")
    start = clock()
    history = []
    for c in log2_C:
        for g in log2_gamma:
            idx = len(history)
            history.append(evaluate_svm(train, validation, HyperPoint(c, g), solver,
                                        deadline, eval_seed(seed, idx), budget, 0, idx))
    ok = [r for r in history if not r.failed]
    if not ok:
        raise TuningError("every grid evaluation failed")
    best = min(ok, key=lambda r: (r.validation_error, r.iterations,
                                  r.point.log2_C, r.point.log2_gamma))
    return TuneResult(best.point, best.validation_error, history,
                      sum(r.train_seconds + r.validate_seconds for r in history),
                      clock() - start)


def retrain_final(train: Dataset, best_point: HyperPoint, solver: str,
                  final_deadline: float = 300.0, seed: int = 0,
                  budget: int = 2048) -> SvmModel:
    cfg = TrainConfig.from_log2(best_point.log2_C, best_point.log2_gamma,
                                deadline=final_deadline, seed=seed, budget=budget)
    return get_solver(solver)(train, cfg)


def write_history_csv(result: TuneResult, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(result.history_csv())


def write_result_json(result: TuneResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.to_json(), fh, indent=1)
        fh.write("\n")
