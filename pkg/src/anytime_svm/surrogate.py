"""Kriging surrogate over the (log2 C, log2 gamma) box plus EI / LCB.

The design is mapped to the unit square. The covariance is an anisotropic
squared exponential ``s2 * (exp(-1/2 sum_k d_k^2 / l_k^2) + nugget * [i == j])``
with a constant mean equal to the average observation. The signal variance
``s2`` is profiled out of the likelihood; the two length-scales are fitted by
multi-start L-BFGS-B on the concentrated log-likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg, optimize
from scipy.spatial.distance import cdist
from scipy.special import ndtr

LOW, HIGH = -15.0, 15.0
LENGTH_BOUNDS = (1e-2, 10.0)
NUGGET_START = 1e-8
NUGGET_MAX = 1e-2
N_STARTS = 8
START_SEED = 20160401
# A Cholesky pivot below this (squared, correlation units) marks the
# covariance as numerically singular. Kept well above the starting nugget so
# that nugget * alpha stays negligible and noise-free fits interpolate.
MIN_PIVOT2 = 1e-4
_SQRT_2PI = math.sqrt(2 * math.pi)


class SurrogateError(RuntimeError):
    pass


@dataclass(frozen=True, order=True)
class HyperPoint:
    log2_C: float
    log2_gamma: float

    def __post_init__(self):
        for v in (self.log2_C, self.log2_gamma):
            if not (LOW <= v <= HIGH):
                raise ValueError(f"point ({self.log2_C}, {self.log2_gamma}) outside the box")

    @property
    def C(self) -> float:
        return 2.0 ** self.log2_C

    @property
    def gamma(self) -> float:
        return 2.0 ** self.log2_gamma

    def as_array(self) -> np.ndarray:
        return np.array([self.log2_C, self.log2_gamma])

    @classmethod
    def from_unit(cls, u) -> "HyperPoint":
        v = LOW + (HIGH - LOW) * np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        return cls(float(v[0]), float(v[1]))


def to_unit(points) -> np.ndarray:
    """Map log2 coordinates (or HyperPoints) to the unit square."""
    if isinstance(points, HyperPoint):
        points = [points]
    arr = np.array([p.as_array() if isinstance(p, HyperPoint) else p for p in points],
                   dtype=float).reshape(-1, 2)
    return (arr - LOW) / (HIGH - LOW)


def _sqdiff(U, V):
    """Per-axis squared differences, shape ``(2, len(U), len(V))``."""
    return np.stack([(U[:, None, k] - V[None, :, k]) ** 2 for k in range(U.shape[1])])


def _corr(U, V, lengths):
    return np.exp(-0.5 * cdist(U / lengths, V / lengths, "sqeuclidean"))


def _factor(R):
    """Cholesky factor, or None when the matrix is numerically singular."""
    try:
        L = linalg.cholesky(R, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return None
    if np.min(np.diag(L)) ** 2 < MIN_PIVOT2:
        return None
    return L


def neg_log_likelihood(log_lengths, U, r, nugget, grad=True, D=None):
    """Concentrated negative log-likelihood (constants dropped) and its gradient.

    Returns ``(inf, 0)`` for numerically singular correlation matrices.
    ``D`` optionally supplies the precomputed per-axis squared differences.
    """
    n = len(r)
    inv2 = np.exp(-2.0 * np.asarray(log_lengths, dtype=float))
    if D is None:
        D = _sqdiff(U, U)
    K = np.exp(-0.5 * (D[0] * inv2[0] + D[1] * inv2[1]))
    R = K + nugget * np.eye(n)
    L = _factor(R)
    if L is None:
        return (np.inf, np.zeros(2)) if grad else np.inf
    alpha = linalg.cho_solve((L, True), r, check_finite=False)
    quad = max(float(r @ alpha), 1e-300)
    sigma2 = quad / n
    nll = 0.5 * n * math.log(sigma2) + np.sum(np.log(np.diag(L)))
    if not grad:
        return nll
    Rinv, info = linalg.lapack.dpotri(L, lower=1)
    Rinv = np.tril(Rinv) + np.tril(Rinv, -1).T
    # dR_k = K * D_k / l_k^2, and dnll_k = 0.5 * tr((R^-1 - a a'/sigma2) dR_k)
    KW = K * (Rinv - np.outer(alpha, alpha) / sigma2)
    g = 0.5 * inv2 * np.array([np.vdot(KW, D[0]), np.vdot(KW, D[1])])
    return nll, g


@dataclass(frozen=True, eq=False)
class Surrogate:
    """Fitted Kriging model; immutable, queries are pure."""

    design: np.ndarray          # unit-square coordinates, shape (n, 2)
    observations: np.ndarray
    mean: float
    signal_variance: float
    lengths: np.ndarray
    nugget: float
    chol: np.ndarray
    alpha: np.ndarray           # R^-1 (y - mean)
    chol_inv: np.ndarray        # L^-1, so posterior variance is one matmul

    def predict_unit(self, U) -> tuple[np.ndarray, np.ndarray]:
        U = np.asarray(U, dtype=float).reshape(-1, 2)
        k = _corr(U, self.design, self.lengths)
        mu = self.mean + k @ self.alpha
        v = self.chol_inv @ k.T
        var = self.signal_variance * np.clip(1.0 - np.einsum("ij,ij->j", v, v), 0.0, None)
        return mu, np.sqrt(var)

    def predict(self, points) -> tuple[np.ndarray, np.ndarray]:
        return self.predict_unit(to_unit(points))

    @property
    def prior_sd(self) -> float:
        return math.sqrt(self.signal_variance)

    @property
    def gp_hyperparams(self) -> dict:
        return {"signal_variance": self.signal_variance,
                "lengths": [float(v) for v in self.lengths], "nugget": self.nugget}


def _fit_at(U, y, nugget):
    r = y - y.mean()
    lo, hi = np.log(LENGTH_BOUNDS[0]), np.log(LENGTH_BOUNDS[1])
    starts = np.random.default_rng(START_SEED).uniform(lo, hi, size=(N_STARTS, 2))
    D = _sqdiff(U, U)
    best = None
    for x0 in starts:
        f0 = neg_log_likelihood(x0, U, r, nugget, False, D)
        if not np.isfinite(f0):
            continue
        res = optimize.minimize(neg_log_likelihood, x0, args=(U, r, nugget, True, D), jac=True,
                                method="L-BFGS-B", bounds=[(lo, hi)] * 2)
        x, f = res.x, res.fun
        if not np.isfinite(f):
            x, f = x0, f0
        if best is None or f < best[1] - 1e-12:
            best = (x, f)
    if best is None:
        return None
    lengths = np.exp(best[0])
    R = _corr(U, U, lengths) + nugget * np.eye(len(y))
    L = _factor(R)
    if L is None:
        return None
    alpha = linalg.cho_solve((L, True), r, check_finite=False)
    sigma2 = max(float(r @ alpha) / len(y), 1e-300)
    Linv = linalg.solve_triangular(L, np.eye(len(y)), lower=True, check_finite=False)
    return Surrogate(U, y.copy(), float(y.mean()), sigma2, lengths, nugget, L, alpha, Linv)


def fit(records: Sequence[tuple]) -> Surrogate:
    """Fit a surrogate to ``(HyperPoint, error)`` records.

    The nugget starts at 1e-8 and is raised tenfold, up to 1e-2, while the
    correlation matrix stays numerically singular for every start.
    """
    if len(records) < 2:
        raise SurrogateError("need at least two records to fit")
    # canonical order makes the fit independent of record order
    pts = np.array([p.as_array() for p, _ in records], dtype=float)
    y = np.array([float(e) for _, e in records])
    if not np.all(np.isfinite(y)):
        raise SurrogateError("observations must be finite")
    order = np.lexsort((y, pts[:, 1], pts[:, 0]))
    U = to_unit(pts[order])
    y = y[order]
    nugget = NUGGET_START
    while nugget <= NUGGET_MAX * (1 + 1e-9):
        s = _fit_at(U, y, nugget)
        if s is not None:
            return s
        nugget *= 10.0
    raise SurrogateError("covariance matrix singular even at the largest nugget")


def posterior(s: Surrogate, x: HyperPoint) -> tuple[float, float]:
    mu, sd = s.predict([x])
    return float(mu[0]), float(sd[0])


# ---------------------------------------------------------------------------
# acquisition functions


def expected_improvement(mu, sd, incumbent):
    """Closed-form EI for minimisation; reduces to ``max(f* - mu, 0)`` at sd = 0."""
    mu = np.asarray(mu, dtype=float)
    sd = np.asarray(sd, dtype=float)
    diff = incumbent - mu
    out = np.maximum(diff, 0.0)
    pos = sd > 0
    if np.any(pos):
        # denormal sd overflows z harmlessly: ndtr -> 0/1 and the density -> 0
        with np.errstate(over="ignore", divide="ignore"):
            z = diff[pos] / sd[pos]
            val = diff[pos] * ndtr(z) + sd[pos] * np.exp(-0.5 * z * z) / _SQRT_2PI
        out = out.astype(float)
        out[pos] = np.maximum(val, 0.0)
    return out


def lower_confidence_bound(mu, sd, lam):
    return np.asarray(mu) - lam * np.asarray(sd)


def ei(s: Surrogate, x: HyperPoint, incumbent: float) -> float:
    mu, sd = posterior(s, x)
    return float(expected_improvement(np.array([mu]), np.array([sd]), incumbent)[0])


def lcb(s: Surrogate, x: HyperPoint, lam: float) -> float:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    mu, sd = posterior(s, x)
    return mu - lam * sd


@dataclass(frozen=True)
class Acquisition:
    kind: str
    lam: float = 1.0
    incumbent: float = 0.0

    def __post_init__(self):
        if self.kind not in ("EI", "LCB"):
            raise ValueError(f"unknown acquisition {self.kind!r}")
        if self.kind == "LCB" and not self.lam > 0:
            raise ValueError("LCB needs lambda > 0")

    def values(self, s: Surrogate, U) -> np.ndarray:
        """Values to minimise at unit-square points (EI is negated)."""
        mu, sd = s.predict_unit(U)
        if self.kind == "LCB":
            return lower_confidence_bound(mu, sd, self.lam)
        return -expected_improvement(mu, sd, self.incumbent)
