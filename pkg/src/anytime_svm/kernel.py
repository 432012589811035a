"""RBF kernel evaluation and the per-run kernel row cache.

The cache keeps its state in plain numpy arrays so the compiled solver loops
can fetch rows without calling back into Python. Rows are evicted in
least-recently-used order once the byte budget is reached.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .dataio import Dataset, SparseVector

DEFAULT_CACHE_BYTES = 256 * 1024 * 1024

# counters layout: [clock, hits, misses]
_CLOCK, _HITS, _MISSES = 0, 1, 2


@dataclass(frozen=True)
class KernelParams:
    gamma: float

    def __post_init__(self):
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"gamma must be positive and finite, got {self.gamma}")


def squared_distance(x: SparseVector, x2: SparseVector) -> float:
    """Merge-walk over both index lists; no norm-expansion cancellation."""
    s = 0.0
    i = j = 0
    ia, va, ib, vb = x.indices, x.values, x2.indices, x2.values
    while i < len(ia) and j < len(ib):
        if ia[i] == ib[j]:
            t = va[i] - vb[j]
            i += 1
            j += 1
        elif ia[i] < ib[j]:
            t = va[i]
            i += 1
        else:
            t = -vb[j]
            j += 1
        s += t * t
    while i < len(ia):
        s += va[i] * va[i]
        i += 1
    while j < len(ib):
        s += vb[j] * vb[j]
        j += 1
    return s


def rbf(x: SparseVector, x2: SparseVector, p: KernelParams) -> float:
    return math.exp(-p.gamma * squared_distance(x, x2))


# ---------------------------------------------------------------------------
# compiled primitives


@numba.njit(cache=True, nogil=True)
def _row_into(X, gamma, i, out):
    n, d = X.shape
    for j in range(n):
        s = 0.0
        for k in range(d):
            t = X[j, k] - X[i, k]
            s += t * t
        out[j] = math.exp(-gamma * s)


@numba.njit(cache=True, nogil=True)
def fetch_row(X, gamma, buf, slot_of, owner, stamp, counters, scratch, i):
    """Return kernel row ``i``, from the cache when possible.

    With fewer than two slots caching is disabled and ``scratch`` is used,
    so two rows requested back to back never evict each other.
    """
    nslots = buf.shape[0]
    counters[_CLOCK] += 1
    if nslots < 2:
        counters[_MISSES] += 1
        _row_into(X, gamma, i, scratch)
        return scratch
    s = slot_of[i]
    if s >= 0:
        counters[_HITS] += 1
        stamp[s] = counters[_CLOCK]
        return buf[s]
    counters[_MISSES] += 1
    # pick an empty slot, else the least recently used one
    best = 0
    best_stamp = stamp[0]
    for t in range(nslots):
        if owner[t] < 0:
            best = t
            break
        if stamp[t] < best_stamp:
            best = t
            best_stamp = stamp[t]
    if owner[best] >= 0:
        slot_of[owner[best]] = -1
    owner[best] = i
    slot_of[i] = best
    stamp[best] = counters[_CLOCK]
    row = buf[best]
    _row_into(X, gamma, i, row)
    return row


@numba.njit(cache=True, nogil=True)
def cross_kernel(A, B, gamma, out):
    """``out[a, b] = exp(-gamma * ||A[a] - B[b]||^2)``."""
    na, d = A.shape
    nb = B.shape[0]
    for a in range(na):
        for b in range(nb):
            s = 0.0
            for k in range(d):
                t = A[a, k] - B[b, k]
                s += t * t
            out[a, b] = math.exp(-gamma * s)


@numba.njit(cache=True, nogil=True)
def expansion_values(SV, coef, bias, gamma, X, out):
    """Decision values ``sum_i coef_i k(SV_i, x) + bias`` for every row of X."""
    n, d = X.shape
    m = SV.shape[0]
    for a in range(n):
        acc = 0.0
        for b in range(m):
            s = 0.0
            for k in range(d):
                t = SV[b, k] - X[a, k]
                s += t * t
            acc += coef[b] * math.exp(-gamma * s)
        out[a] = acc + bias


# ---------------------------------------------------------------------------


class KernelCache:
    """Byte-bounded LRU cache of kernel rows for one (dataset, gamma) pair.

    A cache is owned by a single training run. Binding it to a different
    dataset or bandwidth drops every stored row.
    """

    def __init__(self, capacity_bytes: int = DEFAULT_CACHE_BYTES):
        if capacity_bytes < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity_bytes = int(capacity_bytes)
        self._key = None
        self.X = None
        self.gamma = None
        self.counters = np.zeros(3, dtype=np.int64)

    def bind(self, X: np.ndarray, gamma: float) -> "KernelCache":
        key = (id(X), X.shape, float(gamma))
        if key == self._key:
            return self
        n = X.shape[0]
        row_bytes = 8 * max(n, 1)
        nslots = min(n, self.capacity_bytes // row_bytes)
        if nslots < 2:
            nslots = 0
        self._key = key
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.gamma = float(gamma)
        self.buf = np.empty((nslots, n), dtype=np.float64)
        self.slot_of = np.full(n, -1, dtype=np.int64)
        self.owner = np.full(nslots, -1, dtype=np.int64)
        self.stamp = np.zeros(nslots, dtype=np.int64)
        self.scratch = np.empty(n, dtype=np.float64)
        self.counters = np.zeros(3, dtype=np.int64)
        return self

    @property
    def slots(self) -> int:
        return self.buf.shape[0] if self._key is not None else 0

    @property
    def stored_bytes(self) -> int:
        if self._key is None:
            return 0
        return int(np.count_nonzero(self.owner >= 0)) * self.buf.shape[1] * 8

    @property
    def hits(self) -> int:
        return int(self.counters[_HITS])

    @property
    def misses(self) -> int:
        return int(self.counters[_MISSES])

    def row(self, i: int) -> np.ndarray:
        if not 0 <= i < self.X.shape[0]:
            raise IndexError(i)
        r = fetch_row(self.X, self.gamma, self.buf, self.slot_of, self.owner,
                      self.stamp, self.counters, self.scratch, i)
        return r.copy()

    def arrays(self):
        """Argument tuple the compiled solvers expect, in order."""
        return (self.X, self.gamma, self.buf, self.slot_of, self.owner,
                self.stamp, self.counters)


def kernel_row(cache: KernelCache, dataset: Dataset, i: int, p: KernelParams) -> np.ndarray:
    """Vector of ``k(x_i, x_j)`` over all examples ``j`` of ``dataset``."""
    return cache.bind(dataset.X, p.gamma).row(i)


def gram_matrix(dataset: Dataset, p: KernelParams) -> np.ndarray:
    out = np.empty((len(dataset), len(dataset)))
    cross_kernel(dataset.X, dataset.X, p.gamma, out)
    return out
