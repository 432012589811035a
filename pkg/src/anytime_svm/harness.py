"""End-to-end experiment driver: tuned solvers against an untruncated grid.

Layout under ``output_dir``::

    experiment.json                      normalised config (drives ``collect_report``)
    runs/<dataset>/<method>/<seed>/      history.csv, model.json, record.json
    errors.csv, timings.csv, stats.json  aggregated tables

``method`` is a solver name or ``grid`` for the baseline.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .dataio import (SYNTHETIC_KINDS, ConfigError, Dataset, SplitSpec, load_libsvm,
                     make_synthetic, parse_binarize, scale_unit, split)
from .solvers import SOLVERS, TrainingError, validation_error
from .solvers.base import clock
from .stats import ResultMatrix, StatsError, TestReport, test_report, write_report
from .tuner import (TuneConfig, TuningError, ego_tune, grid_search, log_grid,
                    retrain_final, write_history_csv)

log = logging.getLogger(__name__)

BASELINE = "grid"

# named synthetic benchmarks at desk scale
REGISTRY = {
    "two-gaussians": {"kind": "two-gaussians", "n": 4000, "noise": 0.0, "seed": 1},
    "checkerboard": {"kind": "checkerboard", "n": 5000, "noise": 0.0, "seed": 1},
    "xor-rings": {"kind": "xor-rings", "n": 4000, "noise": 0.0, "seed": 1},
}

_TOP_KEYS = {"datasets", "solvers", "seeds", "tune", "time_limit", "time_scale", "baseline",
             "final_deadline", "split", "output_dir", "control", "alpha", "workers"}
_TUNE_KEYS = {"initial_design_size", "iterations", "batch_size", "lambda_mean", "budget"}
_BASELINE_KEYS = {"solver", "grid_size", "deadline"}
_DATASET_KEYS = {"name", "kind", "n", "noise", "seed", "path", "binarize", "scale"}


class ReportError(RuntimeError):
    pass


def time_limit_heuristic(n: int, scale: float = 1.0) -> float:
    """Per-evaluation training deadline ``2 ** (log10(n) + 1)`` seconds, times ``scale``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return 2.0 ** (math.log10(n) + 1.0) * scale


@dataclass
class DatasetSpec:
    name: str
    kind: str | None = None
    n: int = 0
    noise: float = 0.0
    seed: int = 0
    path: str | None = None
    binarize: str | None = None
    scale: bool = False

    @classmethod
    def parse(cls, entry) -> "DatasetSpec":
        if isinstance(entry, str):
            if entry not in REGISTRY:
                raise ConfigError(f"unknown dataset {entry!r}; known: {sorted(REGISTRY)}")
            return cls(entry, **REGISTRY[entry])
        if not isinstance(entry, dict) or "name" not in entry:
            raise ConfigError(f"dataset entry needs a name: {entry!r}")
        extra = set(entry) - _DATASET_KEYS
        if extra:
            raise ConfigError(f"unknown dataset keys {sorted(extra)}")
        spec = cls(**entry)
        if spec.path is None:
            if spec.kind not in SYNTHETIC_KINDS:
                raise ConfigError(f"dataset {spec.name!r}: unknown kind {spec.kind!r}")
            if spec.n < 4:
                raise ConfigError(f"dataset {spec.name!r}: n must be >= 4")
        elif not os.path.exists(spec.path):
            raise ConfigError(f"dataset {spec.name!r}: no such file {spec.path}")
        parse_binarize(spec.binarize)
        return spec

    def load(self) -> Dataset:
        if self.path is None:
            ds = make_synthetic(self.kind, self.n, self.noise, self.seed)
        else:
            ds = load_libsvm(self.path, parse_binarize(self.binarize), self.name)
        if self.scale:
            ds = scale_unit(ds)
        return Dataset(ds.X, ds.y, self.name)


@dataclass
class ExperimentConfig:
    datasets: list[DatasetSpec]
    solvers: list[str]
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    tune: dict = field(default_factory=dict)
    time_limit: float | str = "auto"
    time_scale: float = 1.0
    baseline: dict = field(default_factory=lambda: {"solver": "smo", "grid_size": 11})
    final_deadline: float = 300.0
    split: tuple = (2, 1, 1)
    output_dir: str = "experiment-out"
    control: str = BASELINE
    alpha: float = 0.05
    workers: int = 1

    def __post_init__(self):
        if not self.datasets:
            raise ConfigError("datasets must be non-empty")
        if not self.solvers:
            raise ConfigError("solvers must be non-empty")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise ConfigError("dataset names must be unique")
        for s in [*self.solvers, self.baseline.get("solver", "smo")]:
            if s not in SOLVERS:
                raise ConfigError(f"unknown solver {s!r}")
        if len(set(self.solvers)) != len(self.solvers):
            raise ConfigError("solvers must be unique")
        if set(self.tune) - _TUNE_KEYS:
            raise ConfigError(f"unknown tune keys {sorted(set(self.tune) - _TUNE_KEYS)}")
        if set(self.baseline) - _BASELINE_KEYS:
            raise ConfigError(f"unknown baseline keys {sorted(set(self.baseline) - _BASELINE_KEYS)}")
        if not (self.time_limit == "auto" or (isinstance(self.time_limit, (int, float))
                                              and self.time_limit >= 0)):
            raise ConfigError("time_limit must be 'auto' or a non-negative number")
        if self.control not in (BASELINE, *self.solvers):
            raise ConfigError(f"control {self.control!r} is not a method of this experiment")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.split = tuple(self.split)
        try:
            SplitSpec(self.split)
            self.tune_config(0, self.solvers[0], 1.0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        extra = set(d) - _TOP_KEYS
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        if "datasets" not in d or "solvers" not in d:
            raise ConfigError("config needs 'datasets' and 'solvers'")
        d = dict(d)
        d["datasets"] = [DatasetSpec.parse(e) for e in d["datasets"] or []]
        d["solvers"] = list(d["solvers"] or [])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        """Read a JSON or YAML config file (YAML is a superset, so one parser serves)."""
        try:
            with open(path, encoding="utf-8") as fh:
                d = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        return d

    @property
    def methods(self) -> list[str]:
        return [BASELINE, *self.solvers]

    def grid(self) -> list[float]:
        return log_grid(int(self.baseline.get("grid_size", 11)))

    def deadline_for(self, n_train: int) -> float:
        if self.time_limit == "auto":
            return time_limit_heuristic(n_train, self.time_scale)
        return float(self.time_limit)

    def tune_config(self, seed: int, solver: str, deadline: float) -> TuneConfig:
        return TuneConfig(seed=seed, solver=solver, deadline=deadline, **self.tune)


# ---------------------------------------------------------------------------
# running


def cell_dir(root, dataset: str, method: str, seed: int) -> Path:
    return Path(root) / "runs" / dataset / method / str(seed)


def _persist(root, rec: dict, result=None, model=None) -> None:
    d = cell_dir(root, rec["dataset"], rec["method"], rec["seed"])
    d.mkdir(parents=True, exist_ok=True)
    if result is not None:
        write_history_csv(result, d / "history.csv")
    if model is not None:
        model.save(d / "model.json")
    with open(d / "record.json", "w", encoding="utf-8") as fh:
        json.dump(rec, fh, indent=1, sort_keys=True)
        fh.write("\n")


def run_cell(cfg: ExperimentConfig, spec: DatasetSpec, data: Dataset, method: str,
             seed: int) -> dict:
    """Tune + final retrain for one (dataset, method, seed); persists and returns the record."""
    outer = clock()
    tr, va, te = split(data, SplitSpec(cfg.split, seed))
    fingerprints = [tr.fingerprint(), va.fingerprint(), te.fingerprint()]
    deadline = cfg.deadline_for(len(tr))
    rec = {"dataset": spec.name, "method": method, "seed": seed, "split": fingerprints,
           "n_train": len(tr), "failed": False}
    log.info("%s/%s/%d split %s", spec.name, method, seed, fingerprints[0][:12])
    try:
        if method == BASELINE:
            solver = cfg.baseline.get("solver", "smo")
            bdl = cfg.baseline.get("deadline")
            res = grid_search(tr, va, cfg.grid(), cfg.grid(), solver,
                              math.inf if bdl is None else float(bdl), seed)
            deadline = math.inf if bdl is None else float(bdl)
        else:
            solver = method
            res = ego_tune(tr, va, cfg.tune_config(seed, method, deadline))
        model = retrain_final(tr, res.best_point, solver, cfg.final_deadline,
                              res.best_record.seed,
                              cfg.tune.get("budget", 2048))
    except (TuningError, TrainingError) as exc:
        rec.update(failed=True, reason=str(exc))
        _persist(cfg.output_dir, rec)
        log.warning("cell %s/%s/%d failed: %s", spec.name, method, seed, exc)
        return rec
    wall = clock() - outer
    rec.update(
        solver=solver,
        deadline="inf" if math.isinf(deadline) else deadline,
        best_point=[res.best_point.log2_C, res.best_point.log2_gamma],
        validation_error=res.best_error,
        test_error=validation_error(model, te),
        evaluations=len(res.history),
        failed_evaluations=sum(r.failed for r in res.history),
        eval_seconds=res.total_tune_seconds,
        final_seconds=model.elapsed,
        tune_seconds=res.total_tune_seconds + model.elapsed,
        overhead_seconds=res.overhead_seconds,
        wall_seconds=wall,
    )
    _persist(cfg.output_dir, rec, res, model)
    return rec


def write_config(cfg: ExperimentConfig) -> None:
    root = Path(cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "experiment.json", "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def run_experiment(cfg: ExperimentConfig, resume: bool = False) -> "ExperimentReport":
    """Run every cell, persist raw records, then aggregate from disk.

    With ``resume`` cells that already have a ``record.json`` are kept as they
    are; this is only sound if the directory was produced by the same config.
    """
    root = Path(cfg.output_dir)
    if resume and (root / "experiment.json").exists():
        with open(root / "experiment.json", encoding="utf-8") as fh:
            if json.load(fh) != json.loads(json.dumps(cfg.to_dict())):
                raise ConfigError(f"{root} holds a different experiment; cannot resume")
    write_config(cfg)
    data = {spec.name: spec.load() for spec in cfg.datasets}
    jobs = [(spec, m, s) for spec in cfg.datasets for s in cfg.seeds for m in cfg.methods
            if not (resume and (cell_dir(root, spec.name, m, s) / "record.json").exists())]

    def go(job):
        spec, method, seed = job
        return run_cell(cfg, spec, data[spec.name], method, seed)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            list(pool.map(go, jobs))
    else:
        for j in jobs:
            go(j)
    report = collect_report(cfg.output_dir)
    report_tables(report, cfg.output_dir)
    return report


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class CellSummary:
    dataset: str
    method: str
    n_seeds: int
    failed: bool
    test_error: float | None = None
    validation_error: float | None = None
    tune_seconds: float | None = None
    timing_factor: float | None = None
    best_points: list = field(default_factory=list)


@dataclass
class ExperimentReport:
    datasets: list[str]
    methods: list[str]
    cells: list[CellSummary]
    stats: TestReport | None
    control: str = BASELINE
    records: list[dict] = field(default_factory=list)

    def cell(self, dataset: str, method: str) -> CellSummary:
        for c in self.cells:
            if c.dataset == dataset and c.method == method:
                return c
        raise KeyError((dataset, method))


def _median(xs):
    return float(np.median(xs)) if xs else None


def build_report(cfg: dict, records: list[dict]) -> ExperimentReport:
    datasets = [d["name"] for d in cfg["datasets"]]
    methods = [BASELINE, *cfg["solvers"]]
    by_cell = {}
    for r in records:
        by_cell.setdefault((r["dataset"], r["method"]), []).append(r)
    cells = []
    for d in datasets:
        for m in methods:
            ok = sorted((r for r in by_cell.get((d, m), []) if not r["failed"]),
                        key=lambda r: r["seed"])
            if not ok:
                log.warning("cell %s/%s failed on every seed; excluded from stats", d, m)
            cells.append(CellSummary(
                d, m, len(ok), not ok,
                _median([r["test_error"] for r in ok]),
                _median([r["validation_error"] for r in ok]),
                _median([r["tune_seconds"] for r in ok]),
                None, [r["best_point"] for r in ok]))
    index = {(c.dataset, c.method): c for c in cells}
    for c in cells:
        base = index[c.dataset, BASELINE]
        if not c.failed and not base.failed and c.tune_seconds > 0 and base.tune_seconds > 0:
            c.timing_factor = math.log10(base.tune_seconds / c.tune_seconds)
    control = cfg.get("control", BASELINE)
    stats = None
    usable = [m for m in methods if all(not index[d, m].failed for d in datasets)]
    if control in usable:
        try:
            mat = ResultMatrix(np.array([[index[d, m].test_error for m in usable]
                                         for d in datasets]), datasets, usable)
            stats = test_report(mat, control, cfg.get("alpha", 0.05))
        except StatsError as exc:
            log.warning("statistics skipped: %s", exc)
    return ExperimentReport(datasets, methods, cells, stats, control, records)


def collect_report(root) -> ExperimentReport:
    """Rebuild the report from persisted records; raises ReportError on gaps."""
    root = Path(root)
    cfg_path = root / "experiment.json"
    if not cfg_path.exists():
        raise ReportError(f"{root}: no experiment.json; not an experiment directory")
    with open(cfg_path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    records, missing = [], []
    for d in cfg["datasets"]:
        for m in [BASELINE, *cfg["solvers"]]:
            for s in cfg["seeds"]:
                p = cell_dir(root, d["name"], m, s) / "record.json"
                if not p.exists():
                    missing.append(f"{d['name']}/{m}/{s}")
                    continue
                with open(p, encoding="utf-8") as fh:
                    records.append(json.load(fh))
    if missing:
        raise ReportError("missing cells: " + ", ".join(missing))
    return build_report(cfg, records)


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def errors_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset", "method", "test_error", "validation_error", "n_seeds", "failed"])
    for c in report.cells:
        w.writerow([c.dataset, c.method, _fmt(c.test_error), _fmt(c.validation_error),
                    c.n_seeds, int(c.failed)])
    return buf.getvalue()


def timings_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset", "method", "tune_seconds", "timing_factor"])
    for c in report.cells:
        w.writerow([c.dataset, c.method, _fmt(c.tune_seconds), _fmt(c.timing_factor)])
    return buf.getvalue()


def report_tables(report: ExperimentReport, out_dir) -> tuple[Path, Path, Path]:
    """Write errors.csv, timings.csv and stats.json; output depends only on ``report``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = out / "errors.csv", out / "timings.csv", out / "stats.json"
    paths[0].write_text(errors_csv(report), encoding="utf-8")
    paths[1].write_text(timings_csv(report), encoding="utf-8")
    if report.stats is not None:
        write_report(report.stats, paths[2])
    else:
        paths[2].write_text(json.dumps({"skipped": "fewer than 2 complete datasets or methods"})
                            + "\n", encoding="utf-8")
    return paths
