"""Sparse dataset I/O, synthetic benchmark generators and reproducible splits.

Feature vectors travel through the library in two shapes: :class:`SparseVector`
for single examples (I/O, model persistence, scalar kernel calls) and a dense
``float64`` matrix inside :class:`Dataset` for the vectorized solver paths.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np


class ParseError(ValueError):
    """Malformed LIBSVM input; the message carries the offending line."""


class ConfigError(ValueError):
    """Invalid configuration, such as a split that leaves a part empty."""


@dataclass(frozen=True)
class SparseVector:
    """Sparse feature vector with 1-based, strictly increasing indices."""

    indices: tuple[int, ...] = ()
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.indices) != len(self.values):
            raise ValueError("indices and values differ in length")
        prev = 0
        for idx, val in zip(self.indices, self.values):
            if idx <= prev:
                raise ValueError("indices must be positive and strictly increasing")
            if not math.isfinite(val):
                raise ValueError("non-finite feature value")
            prev = idx

    @classmethod
    def from_dense(cls, row) -> "SparseVector":
        row = np.asarray(row, dtype=np.float64)
        nz = np.flatnonzero(row)
        return cls(tuple(int(i) + 1 for i in nz), tuple(float(row[i]) for i in nz))

    def to_dense(self, dimension: int) -> np.ndarray:
        out = np.zeros(dimension, dtype=np.float64)
        for idx, val in zip(self.indices, self.values):
            if idx > dimension:
                raise ValueError(f"index {idx} exceeds dimension {dimension}")
            out[idx - 1] = val
        return out

    @property
    def max_index(self) -> int:
        return self.indices[-1] if self.indices else 0

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Binary-labelled examples stored as a dense ``(n, dimension)`` matrix.

    ``source_index`` remembers each row's position in the dataset it was split
    from, which makes split assignments auditable.
    """

    X: np.ndarray
    y: np.ndarray
    name: str = "data"
    source_index: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be two-dimensional")
        if len(y) != X.shape[0] or len(y) < 1:
            raise ValueError("need as many labels as examples, and at least one")
        if not np.all((y == 1) | (y == -1)):
            raise ValueError("labels must be -1 or +1")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite feature value")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.source_index is None:
            object.__setattr__(self, "source_index", np.arange(len(y)))

    def __len__(self):
        return self.X.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.X.shape == other.X.shape
                and np.array_equal(self.X, other.X)
                and np.array_equal(self.y, other.y))

    @property
    def dimension(self) -> int:
        return self.X.shape[1]

    @property
    def labels(self) -> list[int]:
        return [int(v) for v in self.y]

    @property
    def examples(self) -> list[SparseVector]:
        return [SparseVector.from_dense(row) for row in self.X]

    def example(self, i: int) -> SparseVector:
        return SparseVector.from_dense(self.X[i])

    def has_both_classes(self) -> bool:
        return bool(np.any(self.y > 0) and np.any(self.y < 0))

    def subset(self, idx, name: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], name or self.name,
                       source_index=self.source_index[idx])

    def fingerprint(self) -> str:
        """Short hash of the row assignment and contents."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.source_index, dtype=np.int64).tobytes())
        h.update(self.X.tobytes())
        h.update(self.y.tobytes())
        return h.hexdigest()[:16]

    @classmethod
    def from_sparse(cls, examples: Iterable[SparseVector], labels: Iterable[int],
                    name: str = "data", dimension: int | None = None) -> "Dataset":
        examples = list(examples)
        dim = max((e.max_index for e in examples), default=0)
        if dimension is not None:
            dim = max(dim, dimension)
        X = np.zeros((len(examples), dim))
        for r, e in enumerate(examples):
            for idx, val in zip(e.indices, e.values):
                X[r, idx - 1] = val
        return cls(X, np.asarray(list(labels), dtype=np.float64), name)


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (2.0, 1.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or any(not (r > 0) for r in self.ratios):
            raise ConfigError("split ratios must be three positive numbers")

    @property
    def normalized(self) -> tuple[float, float, float]:
        total = float(sum(self.ratios))
        return tuple(r / total for r in self.ratios)


# ---------------------------------------------------------------------------
# LIBSVM format


def _label_sign(raw: float, positive_class: float | None) -> float:
    if positive_class is not None:
        return 1.0 if raw == positive_class else -1.0
    return 1.0 if raw > 0 else -1.0


def parse_libsvm(stream: TextIO | str, name: str = "data",
                 positive_class: float | None = None) -> Dataset:
    """Read LIBSVM sparse text into a :class:`Dataset`.

    Labels above zero map to +1, everything else to -1. With
    ``positive_class`` set, a one-vs-rest reduction is applied instead:
    that label becomes +1 and all others -1. ``#`` starts a comment.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    examples, labels = [], []
    for lineno, line in enumerate(stream, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            raw_label = float(tokens[0])
        except ValueError:
            raise ParseError(f"malformed label {tokens[0]!r} at line {lineno}") from None
        if not math.isfinite(raw_label):
            raise ParseError(f"non-finite label at line {lineno}")
        indices, values = [], []
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(f"malformed token {tok!r} at line {lineno}")
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(f"malformed token {tok!r} at line {lineno}") from None
            if idx < 1:
                raise ParseError(f"index must be >= 1 at line {lineno}")
            if idx <= prev:
                raise ParseError(f"non-increasing index at line {lineno}")
            if not math.isfinite(val):
                raise ParseError(f"non-finite value at line {lineno}")
            prev = idx
            if val != 0.0:
                indices.append(idx)
                values.append(val)
        examples.append(SparseVector(tuple(indices), tuple(values)))
        labels.append(_label_sign(raw_label, positive_class))
    if not examples:
        raise ParseError("no examples found")
    return Dataset.from_sparse(examples, labels, name=name)


def load_libsvm(path, positive_class: float | None = None, name: str | None = None) -> Dataset:
    from pathlib import Path

    path = Path(path)
    with open(path, encoding="utf-8", newline=None) as fh:
        return parse_libsvm(fh, name=name or path.stem, positive_class=positive_class)


def to_libsvm(ds: Dataset) -> str:
    lines = []
    for row, label in zip(ds.X, ds.y):
        parts = ["+1" if label > 0 else "-1"]
        for j in np.flatnonzero(row):
            parts.append(f"{j + 1}:{float(row[j])!r}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def parse_binarize(spec: str | None) -> float | None:
    """Parse a ``one-vs-rest:<class>`` flag value."""
    if spec is None:
        return None
    mode, sep, cls = spec.partition(":")
    if mode != "one-vs-rest" or not sep:
        raise ConfigError(f"unsupported binarization {spec!r}; expected one-vs-rest:<class>")
    try:
        return float(cls)
    except ValueError:
        raise ConfigError(f"bad class label in {spec!r}") from None


def scale_unit(ds: Dataset) -> Dataset:
    """Min-max scale every feature to [0, 1]; constant features map to 0."""
    lo = ds.X.min(axis=0)
    span = ds.X.max(axis=0) - lo
    span[span == 0] = 1.0
    return Dataset((ds.X - lo) / span, ds.y, ds.name, source_index=ds.source_index)


# ---------------------------------------------------------------------------
# Splitting


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    _, r_val, r_test = spec.normalized
    n_val = int(math.floor(n * r_val))
    n_test = int(math.floor(n * r_test))
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise ConfigError(f"dataset of {n} examples leaves an empty split part")
    return n_train, n_val, n_test


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Random train/validation/test partition; remainder rows go to train."""
    n_train, n_val, _ = split_sizes(len(ds), spec)
    perm = np.random.default_rng(spec.seed).permutation(len(ds))
    parts = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
    return tuple(ds.subset(p, f"{ds.name}/{tag}")
                 for p, tag in zip(parts, ("train", "validation", "test")))


# ---------------------------------------------------------------------------
# Synthetic data

SYNTHETIC_KINDS = ("two-gaussians", "checkerboard", "xor-rings")


def _two_gaussians_rule(X):
    return np.where(X[:, 0] > 0, 1.0, -1.0)


def _checkerboard_rule(X):
    cells = np.floor(X[:, 0]) + np.floor(X[:, 1])
    return np.where(cells % 2 == 0, 1.0, -1.0)


def _xor_rings_rule(X):
    ring = np.floor(np.hypot(X[:, 0], X[:, 1])).astype(int) % 2 == 0
    quadrant = X[:, 0] * X[:, 1] > 0
    return np.where(ring ^ quadrant, 1.0, -1.0)


def _draw_two_gaussians(rng, m):
    centers = np.array([[2.0, 0.0], [-2.0, 0.0]])
    which = rng.integers(0, 2, size=m)
    X = centers[which] + 0.6 * rng.standard_normal((m, 2))
    # keep a clean margin around x0 = 0 so the classes are separable
    return X[np.abs(X[:, 0]) > 0.3]


def _draw_checkerboard(rng, m):
    return rng.uniform(0.0, 4.0, size=(m, 2))


def _draw_xor_rings(rng, m):
    r = 3.0 * np.sqrt(rng.uniform(0.0, 1.0, size=m))
    phi = rng.uniform(0.0, 2 * np.pi, size=m)
    return np.column_stack((r * np.cos(phi), r * np.sin(phi)))


_GENERATORS = {
    "two-gaussians": (_draw_two_gaussians, _two_gaussians_rule),
    "checkerboard": (_draw_checkerboard, _checkerboard_rule),
    "xor-rings": (_draw_xor_rings, _xor_rings_rule),
}


def labeling_rule(kind: str):
    """Noise-free labelling function of a synthetic kind (for oracles)."""
    if kind not in _GENERATORS:
        raise ConfigError(f"unknown synthetic kind {kind!r}")
    return _GENERATORS[kind][1]


def make_synthetic(kind: str, n: int, noise: float = 0.0, seed: int = 0) -> Dataset:
    """Balanced 2-D binary problem of a named shape.

    Points are drawn until each class has its quota (``n // 2`` negatives and
    the rest positives). With ``noise > 0`` the same number of labels
    (``round(noise * n / 2)``) is flipped in each class, so the labels stay
    balanced and the Bayes error equals the flip rate.
    """
    if kind not in _GENERATORS:
        raise ConfigError(f"unknown synthetic kind {kind!r}")
    if n < 4:
        raise ConfigError("synthetic datasets need n >= 4")
    if not 0.0 <= noise < 0.5:
        raise ConfigError("noise must lie in [0, 0.5)")
    draw, rule = _GENERATORS[kind]
    rng = np.random.default_rng(seed)
    n_neg = n // 2
    n_pos = n - n_neg
    pos, neg = [], []
    got_pos = got_neg = 0
    while got_pos < n_pos or got_neg < n_neg:
        X = draw(rng, max(64, 2 * n))
        lab = rule(X)
        p, q = X[lab > 0], X[lab < 0]
        pos.append(p[: n_pos - got_pos])
        neg.append(q[: n_neg - got_neg])
        got_pos += len(pos[-1])
        got_neg += len(neg[-1])
    X = np.vstack(pos + neg)
    y = np.concatenate([np.ones(n_pos), -np.ones(n_neg)])
    n_flip = int(round(noise * n / 2))
    if n_flip:
        flip_pos = rng.choice(n_pos, size=min(n_flip, n_pos), replace=False)
        flip_neg = n_pos + rng.choice(n_neg, size=min(n_flip, n_neg), replace=False)
        y[flip_pos] = -1.0
        y[flip_neg] = 1.0
    perm = rng.permutation(n)
    return Dataset(X[perm], y[perm], name=kind)
