"""Budgeted stochastic gradient descent on the primal SVM objective.

Pegasos-style updates on ``lambda/2 ||w||^2 + 1/n sum_i hinge_i`` with
``lambda = 1 / (C n)`` and step ``1 / (lambda t)``; this is the primal
problem divided by ``C n``. No bias term is learned. Whenever an update would
push the expansion past ``budget`` vectors, the closest same-sign pair among
64 sampled pairs is merged into one vector on the segment between them.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from ..dataio import Dataset
from .base import SvmModel, TrainConfig, TrainingError, clock, run_anytime, zero_model

MERGE_CANDIDATES = 64
GOLDEN = 0.5 * (math.sqrt(5.0) - 1.0)

# state slots
T, POS, M, EPOCH = 0, 1, 2, 3


@numba.njit(cache=True, nogil=True)
def _splitmix(rs):
    rs[0] = (rs[0] + np.uint64(0x9E3779B97F4A7C15))
    z = rs[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, nogil=True)
def _randint(rs, m):
    return np.int64(_splitmix(rs) % np.uint64(m))


@numba.njit(cache=True, nogil=True)
def _sqdist(A, a, B, b):
    s = 0.0
    for k in range(A.shape[1]):
        t = A[a, k] - B[b, k]
        s += t * t
    return s


@numba.njit(cache=True, nogil=True)
def _merged_mass(ca, cb, gamma, dist2, h):
    return ca * math.exp(-gamma * (1.0 - h) * (1.0 - h) * dist2) + \
        cb * math.exp(-gamma * h * h * dist2)


@numba.njit(cache=True, nogil=True)
def _merge(SV, coef, origin, where, m, gamma, rs):
    """Merge two vectors of the expansion; returns the new size ``m - 1``."""
    best_a = -1
    best_b = -1
    best_d = np.inf
    tries = 0
    found = 0
    # same-sign pairs first; fall back to any pair if none turns up
    while found < MERGE_CANDIDATES and tries < 4 * MERGE_CANDIDATES:
        tries += 1
        a = _randint(rs, m)
        b = _randint(rs, m - 1)
        if b >= a:
            b += 1
        if coef[a] * coef[b] <= 0:
            continue
        found += 1
        d = _sqdist(SV, a, SV, b)
        if d < best_d:
            best_d = d
            best_a = a
            best_b = b
    if best_a < 0:
        for _ in range(MERGE_CANDIDATES):
            a = _randint(rs, m)
            b = _randint(rs, m - 1)
            if b >= a:
                b += 1
            d = _sqdist(SV, a, SV, b)
            if d < best_d:
                best_d = d
                best_a = a
                best_b = b
    a = best_a
    b = best_b
    ca = coef[a]
    cb = coef[b]
    # golden-section search for the position h maximising |projected mass|
    lo = 0.0
    hi = 1.0
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1 = abs(_merged_mass(ca, cb, gamma, best_d, x1))
    f2 = abs(_merged_mass(ca, cb, gamma, best_d, x2))
    for _ in range(40):
        if f1 >= f2:
            hi = x2
            x2 = x1
            f2 = f1
            x1 = hi - GOLDEN * (hi - lo)
            f1 = abs(_merged_mass(ca, cb, gamma, best_d, x1))
        else:
            lo = x1
            x1 = x2
            f1 = f2
            x2 = lo + GOLDEN * (hi - lo)
            f2 = abs(_merged_mass(ca, cb, gamma, best_d, x2))
    h = 0.5 * (lo + hi)
    for k in range(SV.shape[1]):
        SV[a, k] = h * SV[a, k] + (1.0 - h) * SV[b, k]
    coef[a] = _merged_mass(ca, cb, gamma, best_d, h)
    for v in (a, b):
        if origin[v] >= 0:
            where[origin[v]] = -1
    origin[a] = -1
    last = m - 1
    if b != last:
        for k in range(SV.shape[1]):
            SV[b, k] = SV[last, k]
        coef[b] = coef[last]
        origin[b] = origin[last]
        if origin[b] >= 0:
            where[origin[b]] = b
    return last


@numba.njit(cache=True, nogil=True)
def _bsgd_steps(X, y, gamma, lam, budget, SV, coef, origin, where, order, state, rs,
                max_steps):
    """Up to ``max_steps`` SGD steps; returns (steps, epoch_finished)."""
    n = X.shape[0]
    d = X.shape[1]
    for step in range(max_steps):
        if state[POS] >= n:
            return step, True
        k = order[state[POS]]
        state[POS] += 1
        state[T] += 1
        t = state[T]
        m = state[M]
        f = 0.0
        for b in range(m):
            f += coef[b] * math.exp(-gamma * _sqdist(SV, b, X, k))
        shrink = 1.0 - 1.0 / t
        for b in range(m):
            coef[b] *= shrink
        if y[k] * f < 1.0:
            # an example still present unmerged just gains weight
            if where[k] >= 0:
                coef[where[k]] += y[k] / (lam * t)
            else:
                for c in range(d):
                    SV[m, c] = X[k, c]
                coef[m] = y[k] / (lam * t)
                origin[m] = k
                where[k] = m
                m += 1
                if m > budget:
                    m = _merge(SV, coef, origin, where, m, gamma, rs)
        state[M] = m
    return max_steps, False


class BsgdState:
    def __init__(self, train: Dataset, cfg: TrainConfig):
        self.X = train.X
        self.y = np.ascontiguousarray(train.y, dtype=np.float64)
        n, d = self.X.shape
        self.n = n
        self.gamma = cfg.kernel.gamma
        self.lam = 1.0 / (cfg.C * n)
        self.budget = int(cfg.budget)
        cap = min(self.budget, n) + 1
        self.SV = np.zeros((cap, d))
        self.coef = np.zeros(cap)
        self.origin = np.full(cap, -1, dtype=np.int64)
        self.where = np.full(n, -1, dtype=np.int64)
        self.state = np.zeros(4, dtype=np.int64)
        self.rng = np.random.default_rng(cfg.seed)
        self.rs = np.array([self.rng.integers(0, 2**63)], dtype=np.uint64)
        self.order = self.rng.permutation(n)
        self.max_epochs = cfg.max_epochs

    def step(self, k: int):
        done = 0
        while done < k:
            d, epoch_end = _bsgd_steps(self.X, self.y, self.gamma, self.lam, self.budget,
                                       self.SV, self.coef, self.origin, self.where,
                                       self.order, self.state,
                                       self.rs, k - done)
            done += d
            if epoch_end:
                self.state[EPOCH] += 1
                if self.state[EPOCH] >= self.max_epochs:
                    return done, True
                self.order = self.rng.permutation(self.n)
                self.state[POS] = 0
        return done, False


def train_bsgd(train: Dataset, cfg: TrainConfig) -> SvmModel:
    """Budgeted SGD until ``cfg.max_epochs`` passes or the deadline."""
    start = clock()
    if not train.has_both_classes():
        raise TrainingError("training set contains a single class")
    if cfg.deadline <= 0:
        return zero_model("bsgd", cfg, train.dimension, clock() - start)
    state = BsgdState(train, cfg)
    iters, finished = run_anytime(state.step, cfg.deadline, start,
                                  cfg.max_epochs * len(train) + 1)
    m = int(state.state[M])
    coef = state.coef[:m]
    keep = coef != 0.0
    model = SvmModel(sv=state.SV[:m][keep].copy(), coef=coef[keep].copy(), bias=0.0,
                     kernel=cfg.kernel, C=cfg.C, solver="bsgd", iterations=iters,
                     dual_objective=None, converged=finished)
    model.elapsed = clock() - start
    return model
