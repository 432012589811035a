"""Friedman omnibus test and Holm step-down comparisons against a control."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats as sps


class StatsError(ValueError):
    pass


@dataclass
class ResultMatrix:
    """Error rates, one row per dataset and one column per method."""

    values: np.ndarray
    datasets: list[str]
    methods: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise StatsError("result matrix must be two-dimensional")
        N, k = self.values.shape
        if N < 2 or k < 2:
            raise StatsError(f"need at least 2 datasets and 2 methods, got {N}x{k}")
        if not np.all(np.isfinite(self.values)):
            raise StatsError("result matrix has missing or non-finite cells")
        if len(self.datasets) != N or len(self.methods) != k:
            raise StatsError("row/column labels do not match the matrix shape")

    @classmethod
    def from_array(cls, values) -> "ResultMatrix":
        v = np.asarray(values, dtype=float)
        if v.ndim != 2:
            raise StatsError("result matrix must be two-dimensional")
        return cls(v, [f"d{i}" for i in range(v.shape[0])],
                   [f"m{j}" for j in range(v.shape[1])])

    @property
    def shape(self):
        return self.values.shape


def read_matrix_csv(path, value: str = "test_error") -> ResultMatrix:
    """Read either a wide matrix (``dataset,<method>...``) or the harness's
    long ``errors.csv`` (columns ``dataset,method,...``)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise StatsError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if "method" in header:
        di, mi, vi = header.index("dataset"), header.index("method"), header.index(value)
        datasets, methods, cells = [], [], {}
        for r in body:
            if r[di] not in datasets:
                datasets.append(r[di])
            if r[mi] not in methods:
                methods.append(r[mi])
            cells[r[di], r[mi]] = float(r[vi]) if r[vi] != "" else math.nan
        vals = [[cells.get((d, m), math.nan) for m in methods] for d in datasets]
        return ResultMatrix(np.array(vals), datasets, methods)
    return ResultMatrix(np.array([[float(x) for x in r[1:]] for r in body]),
                        [r[0] for r in body], header[1:])


def write_matrix_csv(m: ResultMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", *m.methods])
        for d, row in zip(m.datasets, m.values):
            w.writerow([d, *(repr(float(v)) for v in row)])


def rank_rows(values: np.ndarray) -> np.ndarray:
    """Per-row ranks, 1 = lowest error, ties averaged."""
    return sps.rankdata(values, axis=1)


def friedman(m: ResultMatrix, variant: str = "chi2"):
    """Friedman test; returns ``(statistic, p_value, mean_ranks)``.

    ``variant="iman-davenport"`` returns the F-distributed correction instead
    of the chi-square statistic.
    """
    N, k = m.shape
    R = rank_rows(m.values).mean(axis=0)
    chi2 = 12.0 * N / (k * (k + 1)) * float(np.sum((R - (k + 1) / 2.0) ** 2))
    if variant == "chi2":
        p = float(sps.chi2.sf(chi2, k - 1))
        return chi2, min(max(p, 0.0), 1.0), R
    if variant == "iman-davenport":
        denom = N * (k - 1) - chi2
        if denom <= 0:
            return math.inf, 0.0, R
        F = (N - 1) * chi2 / denom
        p = float(sps.f.sf(F, k - 1, (k - 1) * (N - 1)))
        return F, min(max(p, 0.0), 1.0), R
    raise StatsError(f"unknown Friedman variant {variant!r}")


@dataclass
class HolmEntry:
    comparison: str
    raw_p: float
    threshold: float
    rejected: bool


def holm_stepdown(pvalues: Sequence[float], alpha: float = 0.05,
                  labels: Sequence[str] | None = None) -> list[HolmEntry]:
    """Holm's step-down procedure; entries come back in ascending p order.

    The i-th smallest p (1-based) is tested against ``alpha / (h - i + 1)``;
    testing stops at the first non-rejection.
    """
    if not 0 < alpha < 1:
        raise StatsError("alpha must lie in (0, 1)")
    p = np.asarray(pvalues, dtype=float)
    h = len(p)
    labels = list(labels) if labels is not None else [str(i) for i in range(h)]
    order = np.argsort(p, kind="stable")
    out, going = [], True
    for i, j in enumerate(order):
        thr = alpha / (h - i)
        going = going and p[j] <= thr
        out.append(HolmEntry(labels[j], float(p[j]), thr, bool(going)))
    return out


def holm_posthoc(m: ResultMatrix, control: str, alpha: float = 0.05) -> list[HolmEntry]:
    """Compare every method with ``control`` via mean-rank z statistics."""
    if control not in m.methods:
        raise StatsError(f"control {control!r} not among methods {m.methods}")
    N, k = m.shape
    _, _, R = friedman(m)
    c = m.methods.index(control)
    se = math.sqrt(k * (k + 1) / (6.0 * N))
    others = [j for j in range(k) if j != c]
    z = np.array([(R[c] - R[j]) / se for j in others])
    p = np.minimum(2.0 * sps.norm.sf(np.abs(z)), 1.0)
    return holm_stepdown(p, alpha, [f"{control} vs {m.methods[j]}" for j in others])


@dataclass
class TestReport:
    friedman_statistic: float
    p_value: float
    mean_ranks: dict[str, float]
    holm: list[HolmEntry] = field(default_factory=list)
    control: str | None = None
    alpha: float = 0.05
    variant: str = "chi2"

    __test__ = False  # keep pytest from collecting this class

    def to_json(self) -> dict:
        d = asdict(self)
        d["friedman_statistic"] = _finite(self.friedman_statistic)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TestReport":
        d = dict(d)
        d["holm"] = [HolmEntry(**e) for e in d.get("holm", [])]
        st = d["friedman_statistic"]
        d["friedman_statistic"] = math.inf if st == "inf" else float(st)
        return cls(**d)


def _finite(x: float):
    return "inf" if math.isinf(x) else x


def test_report(m: ResultMatrix, control: str | None = None, alpha: float = 0.05,
                variant: str = "chi2") -> TestReport:
    stat, p, R = friedman(m, variant)
    holm = holm_posthoc(m, control, alpha) if control is not None else []
    return TestReport(stat, p, {name: float(r) for name, r in zip(m.methods, R)},
                      holm, control, alpha, variant)


test_report.__test__ = False


def write_report(report: TestReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_report(path) -> TestReport:
    with open(path, encoding="utf-8") as fh:
        return TestReport.from_json(json.load(fh))
