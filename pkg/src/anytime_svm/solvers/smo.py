"""Batch SMO on the SVM dual with first-order (maximal violating pair) selection.

Dual in the minimization form used by LIBSVM::

    min_a  1/2 a'Qa - e'a   s.t.  0 <= a_i <= C,  y'a = 0,   Q_ij = y_i y_j k(x_i, x_j)

``G = Qa - e`` is kept for every example; the reported dual objective is the
maximization value ``e'a - 1/2 a'Qa = 1/2 sum_i a_i (1 - G_i)``.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from ..dataio import Dataset
from ..kernel import KernelCache, fetch_row
from .base import SvmModel, TrainConfig, TrainingError, clock, run_anytime, zero_model

TAU = 1e-12


@numba.njit(cache=True, nogil=True)
def _select(y, alpha, G, C):
    i = -1
    j = -1
    gmax = -np.inf
    gmin = np.inf
    for t in range(y.shape[0]):
        v = -y[t] * G[t]
        if y[t] > 0:
            up = alpha[t] < C
            low = alpha[t] > 0
        else:
            up = alpha[t] > 0
            low = alpha[t] < C
        if up and v > gmax:
            gmax = v
            i = t
        if low and v < gmin:
            gmin = v
            j = t
    return i, j, gmax - gmin


@numba.njit(cache=True, nogil=True)
def _smo_steps(X, gamma, buf, slot_of, owner, stamp, counters, scr_i, scr_j,
               y, C, eps, alpha, G, max_steps):
    """Run up to ``max_steps`` pair updates; returns (steps, converged)."""
    n = y.shape[0]
    for step in range(max_steps):
        i, j, gap = _select(y, alpha, G, C)
        if i < 0 or j < 0 or gap < eps:
            return step, True
        Ki = fetch_row(X, gamma, buf, slot_of, owner, stamp, counters, scr_i, i)
        Kj = fetch_row(X, gamma, buf, slot_of, owner, stamp, counters, scr_j, j)
        old_i = alpha[i]
        old_j = alpha[j]
        quad = Ki[i] + Kj[j] - 2.0 * Ki[j]
        if quad <= 0:
            quad = TAU
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total
        di = (alpha[i] - old_i) * y[i]
        dj = (alpha[j] - old_j) * y[j]
        for t in range(n):
            G[t] += y[t] * (Ki[t] * di + Kj[t] * dj)
    return max_steps, False


@numba.njit(cache=True, nogil=True)
def dual_objective(alpha, G):
    s = 0.0
    for t in range(alpha.shape[0]):
        s += alpha[t] * (1.0 - G[t])
    return 0.5 * s


@numba.njit(cache=True, nogil=True)
def _bias(y, alpha, G, C):
    ub = np.inf
    lb = -np.inf
    nfree = 0
    sfree = 0.0
    for t in range(y.shape[0]):
        yg = y[t] * G[t]
        if alpha[t] >= C:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[t] <= 0:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            nfree += 1
            sfree += yg
    if nfree > 0:
        rho = sfree / nfree
    else:
        rho = 0.5 * (ub + lb)
    return -rho


class SmoState:
    """Mutable dual state of one SMO run (kept around for inspection in tests)."""

    def __init__(self, train: Dataset, cfg: TrainConfig):
        self.y = np.ascontiguousarray(train.y, dtype=np.float64)
        n = len(self.y)
        self.alpha = np.zeros(n)
        self.G = -np.ones(n)
        self.cache = KernelCache(cfg.cache_bytes).bind(train.X, cfg.kernel.gamma)
        self.scr_i = np.empty(n)
        self.scr_j = np.empty(n)
        self.C = float(cfg.C)
        self.eps = float(cfg.epsilon)

    def step(self, k: int):
        done, conv = _smo_steps(*self.cache.arrays(), self.scr_i, self.scr_j,
                                self.y, self.C, self.eps, self.alpha, self.G, k)
        return done, conv

    def objective(self) -> float:
        return float(dual_objective(self.alpha, self.G))


def train_smo(train: Dataset, cfg: TrainConfig) -> SvmModel:
    """Train by SMO until the KKT gap drops below ``cfg.epsilon`` or time runs out."""
    start = clock()
    if not train.has_both_classes():
        raise TrainingError("training set contains a single class")
    if cfg.deadline <= 0:
        return zero_model("smo", cfg, train.dimension, clock() - start)
    state = SmoState(train, cfg)
    trace = []
    on_chunk = (lambda t: trace.append((t, state.objective()))) if cfg.trace else None
    iters, converged = run_anytime(state.step, cfg.deadline, start,
                                   cfg.iteration_cap(len(train)), on_chunk)
    sv = state.alpha > 0
    model = SvmModel(
        sv=train.X[sv], coef=(state.alpha * state.y)[sv],
        bias=float(_bias(state.y, state.alpha, state.G, state.C)),
        kernel=cfg.kernel, C=cfg.C, solver="smo", iterations=iters,
        dual_objective=state.objective(), converged=converged, trace=trace)
    model.elapsed = clock() - start
    return model
