"""LASVM: online SMO with PROCESS / REPROCESS steps.

Works in the signed parametrisation ``beta_i = y_i alpha_i`` with box
``A_i <= beta_i <= B_i`` (``A_i = min(0, C y_i)``, ``B_i = max(0, C y_i)``),
``sum_i beta_i = 0`` and gradient ``g_i = y_i - sum_s beta_s k(x_i, x_s)``,
maintained only for members of the current expansion set S.

Schedule: every arriving example gets one PROCESS (join S, then one update
against its most violating partner if that pair violates the KKT tolerance)
followed by one REPROCESS (one update inside S, then drop blatant
non-support vectors). Epochs run over freshly shuffled
orders. After an epoch without insertions REPROCESS is repeated until the
KKT gap inside S is below tolerance; the run has converged once a further
full epoch makes no PROCESS update. "Insertions" below count PROCESS steps
that updated.
"""

from __future__ import annotations

import numba
import numpy as np

from ..dataio import Dataset
from ..kernel import KernelCache, fetch_row
from .base import SvmModel, TrainConfig, TrainingError, clock, run_anytime, zero_model

TAU = 1e-12

# state slots
PHASE, POS, INSERTS, NS = 0, 1, 2, 3
ONLINE, FINISHING = 0, 1
# chunk return codes
RUNNING, EPOCH_DONE, CONVERGED = 0, 1, 2


@numba.njit(cache=True, nogil=True)
def _lo(y, C, s):
    return min(0.0, C * y[s])


@numba.njit(cache=True, nogil=True)
def _hi(y, C, s):
    return max(0.0, C * y[s])


@numba.njit(cache=True, nogil=True)
def _extremes(y, C, beta, g, active, ns):
    """Most violating pair in S: argmax g over beta<B, argmin g over beta>A."""
    i = -1
    j = -1
    gi = -np.inf
    gj = np.inf
    for a in range(ns):
        s = active[a]
        if beta[s] < _hi(y, C, s) and g[s] > gi:
            gi = g[s]
            i = s
        if beta[s] > _lo(y, C, s) and g[s] < gj:
            gj = g[s]
            j = s
    return i, j, gi, gj


@numba.njit(cache=True, nogil=True)
def _pair_update(X, gamma, buf, slot_of, owner, stamp, counters, scr_i, scr_j,
                 y, C, beta, g, active, ns, i, j):
    Ki = fetch_row(X, gamma, buf, slot_of, owner, stamp, counters, scr_i, i)
    Kj = fetch_row(X, gamma, buf, slot_of, owner, stamp, counters, scr_j, j)
    quad = Ki[i] + Kj[j] - 2.0 * Ki[j]
    if quad <= 0:
        quad = TAU
    room_i = _hi(y, C, i) - beta[i]
    room_j = beta[j] - _lo(y, C, j)
    lam = (g[i] - g[j]) / quad
    if lam >= room_i or lam >= room_j:
        if room_i <= room_j:
            lam = room_i
            beta[i] = _hi(y, C, i)
            beta[j] -= lam
            if room_i == room_j:
                beta[j] = _lo(y, C, j)
        else:
            lam = room_j
            beta[j] = _lo(y, C, j)
            beta[i] += lam
    else:
        beta[i] += lam
        beta[j] -= lam
    for a in range(ns):
        s = active[a]
        g[s] -= lam * (Ki[s] - Kj[s])


@numba.njit(cache=True, nogil=True)
def _remove(in_s, active, ns, a):
    s = active[a]
    in_s[s] = False
    active[a] = active[ns - 1]
    active[ns - 1] = s
    return ns - 1


@numba.njit(cache=True, nogil=True)
def _reprocess(X, gamma, buf, slot_of, owner, stamp, counters, scr_i, scr_j,
               y, C, tau, beta, g, active, in_s, ns):
    """One REPROCESS; returns (new |S|, KKT gap after the step)."""
    i, j, gi, gj = _extremes(y, C, beta, g, active, ns)
    if i >= 0 and j >= 0 and gi - gj > tau:
        _pair_update(X, gamma, buf, slot_of, owner, stamp, counters, scr_i, scr_j,
                     y, C, beta, g, active, ns, i, j)
        i, j, gi, gj = _extremes(y, C, beta, g, active, ns)
    a = ns - 1
    while a >= 0:
        s = active[a]
        if beta[s] == 0.0:
            if (y[s] < 0 and g[s] >= gi) or (y[s] > 0 and g[s] <= gj):
                ns = _remove(in_s, active, ns, a)
        a -= 1
    return ns, gi - gj


@numba.njit(cache=True, nogil=True)
def _process(X, gamma, buf, slot_of, owner, stamp, counters, scr_i, scr_j,
             y, C, tau, beta, g, active, in_s, ns, k):
    """PROCESS(k): add k to S, then update it against its most violating partner.

    Returns (new |S|, whether an update was made).
    """
    if in_s[k]:
        return ns, False
    Kk = fetch_row(X, gamma, buf, slot_of, owner, stamp, counters, scr_i, k)
    gk = y[k]
    for a in range(ns):
        s = active[a]
        gk -= beta[s] * Kk[s]
    active[ns] = k
    ns += 1
    in_s[k] = True
    beta[k] = 0.0
    g[k] = gk
    # k itself is never eligible as its own partner: beta_k = 0 sits on the
    # bound that excludes it from the opposite set
    if y[k] > 0:
        i = k
        gi = gk
        j = -1
        gj = np.inf
        for a in range(ns):
            s = active[a]
            if beta[s] > _lo(y, C, s) and g[s] < gj:
                gj = g[s]
                j = s
    else:
        j = k
        gj = gk
        i = -1
        gi = -np.inf
        for a in range(ns):
            s = active[a]
            if beta[s] < _hi(y, C, s) and g[s] > gi:
                gi = g[s]
                i = s
    if i < 0 or j < 0 or gi - gj <= tau:
        return ns, False
    _pair_update(X, gamma, buf, slot_of, owner, stamp, counters, scr_i, scr_j,
                 y, C, beta, g, active, ns, i, j)
    return ns, True


@numba.njit(cache=True, nogil=True)
def _lasvm_steps(X, gamma, buf, slot_of, owner, stamp, counters, scr_i, scr_j,
                 y, C, tau, beta, g, active, in_s, order, state, max_steps):
    """Advance the schedule by up to ``max_steps`` steps.

    Returns (steps done, code) where code is RUNNING, EPOCH_DONE (caller
    must supply a new order and reset POS/INSERTS) or CONVERGED.
    """
    n = y.shape[0]
    steps = 0
    while steps < max_steps:
        ns = state[NS]
        if state[PHASE] == ONLINE:
            if state[POS] >= n:
                if state[INSERTS] == 0:
                    i, j, gi, gj = _extremes(y, C, beta, g, active, ns)
                    if gi - gj <= tau:
                        return steps, CONVERGED
                    state[PHASE] = FINISHING
                    continue
                return steps, EPOCH_DONE
            k = order[state[POS]]
            state[POS] += 1
            ns2, updated = _process(X, gamma, buf, slot_of, owner, stamp, counters,
                                    scr_i, scr_j, y, C, tau, beta, g, active, in_s, ns, k)
            if updated:
                state[INSERTS] += 1
            ns2, gap = _reprocess(X, gamma, buf, slot_of, owner, stamp, counters, scr_i,
                                  scr_j, y, C, tau, beta, g, active, in_s, ns2)
            state[NS] = ns2
            steps += 1
        else:
            ns2, gap = _reprocess(X, gamma, buf, slot_of, owner, stamp, counters, scr_i,
                                  scr_j, y, C, tau, beta, g, active, in_s, ns)
            state[NS] = ns2
            steps += 1
            if gap <= tau:
                state[PHASE] = ONLINE
                return steps, EPOCH_DONE
    return steps, RUNNING


@numba.njit(cache=True, nogil=True)
def _objective(y, beta, g, active, ns):
    s = 0.0
    for a in range(ns):
        t = active[a]
        s += beta[t] * (y[t] + g[t])
    return 0.5 * s


@numba.njit(cache=True, nogil=True)
def _lasvm_bias(y, C, beta, g, active, ns):
    nfree = 0
    total = 0.0
    for a in range(ns):
        s = active[a]
        if beta[s] != 0.0 and _lo(y, C, s) < beta[s] < _hi(y, C, s):
            nfree += 1
            total += g[s]
    if nfree > 0:
        return total / nfree
    i, j, gi, gj = _extremes(y, C, beta, g, active, ns)
    if i < 0 or j < 0:
        return 0.0
    return 0.5 * (gi + gj)


class LasvmState:
    def __init__(self, train: Dataset, cfg: TrainConfig):
        self.y = np.ascontiguousarray(train.y, dtype=np.float64)
        n = len(self.y)
        self.n = n
        self.C = float(cfg.C)
        self.tau = float(cfg.epsilon)
        self.cache = KernelCache(cfg.cache_bytes).bind(train.X, cfg.kernel.gamma)
        self.scr_i = np.empty(n)
        self.scr_j = np.empty(n)
        self.beta = np.zeros(n)
        self.g = np.zeros(n)
        self.active = np.zeros(n, dtype=np.int64)
        self.in_s = np.zeros(n, dtype=np.bool_)
        self.state = np.zeros(4, dtype=np.int64)
        self.rng = np.random.default_rng(cfg.seed)
        self.epochs = 0
        self.order = self.rng.permutation(n)
        # seed S with the first example of each class in the first order
        first_pos = self.order[np.argmax(self.y[self.order] > 0)]
        first_neg = self.order[np.argmax(self.y[self.order] < 0)]
        for s in (first_pos, first_neg):
            self.active[self.state[NS]] = s
            self.state[NS] += 1
            self.in_s[s] = True
            self.g[s] = self.y[s]
        self.converged = False

    def step(self, k: int):
        done = 0
        while done < k:
            d, code = _lasvm_steps(*self.cache.arrays(), self.scr_i, self.scr_j, self.y,
                                   self.C, self.tau, self.beta, self.g, self.active,
                                   self.in_s, self.order, self.state, k - done)
            done += d
            if code == CONVERGED:
                self.converged = True
                return done, True
            if code == EPOCH_DONE:
                self.epochs += 1
                self.order = self.rng.permutation(self.n)
                self.state[POS] = 0
                self.state[INSERTS] = 0
        return done, False

    @property
    def support(self) -> np.ndarray:
        return self.active[: self.state[NS]]

    def objective(self) -> float:
        return float(_objective(self.y, self.beta, self.g, self.active, self.state[NS]))

    def bias(self) -> float:
        return float(_lasvm_bias(self.y, self.C, self.beta, self.g, self.active, self.state[NS]))


def train_lasvm(train: Dataset, cfg: TrainConfig) -> SvmModel:
    """Train with the LASVM schedule under a wall-clock deadline."""
    start = clock()
    if not train.has_both_classes():
        raise TrainingError("training set contains a single class")
    if cfg.deadline <= 0:
        return zero_model("lasvm", cfg, train.dimension, clock() - start)
    state = LasvmState(train, cfg)
    trace = []
    on_chunk = (lambda t: trace.append((t, state.objective()))) if cfg.trace else None
    iters, converged = run_anytime(state.step, cfg.deadline, start,
                                   cfg.iteration_cap(len(train)), on_chunk)
    idx = np.sort(state.support)
    idx = idx[state.beta[idx] != 0.0]
    model = SvmModel(sv=train.X[idx], coef=state.beta[idx], bias=state.bias(),
                     kernel=cfg.kernel, C=cfg.C, solver="lasvm", iterations=iters,
                     dual_objective=state.objective(), converged=converged, trace=trace)
    model.elapsed = clock() - start
    return model
