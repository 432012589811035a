"""Command-line interface: ``anytime-svm {train,tune,grid,experiment,report}``.

Exit status: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from .dataio import (SYNTHETIC_KINDS, ConfigError, Dataset, ParseError, SplitSpec,
                     load_libsvm, make_synthetic, parse_binarize, split)
from .kernel import KernelParams
from .harness import (ExperimentConfig, ReportError, collect_report, report_tables,
                      run_experiment, time_limit_heuristic)
from .solvers import SOLVERS, TrainConfig, TrainingError, get_solver, validation_error
from .tuner import (TuneConfig, TuningError, ego_tune, grid_search, log_grid,
                    retrain_final, write_history_csv)

DEFAULT_SEED = 0
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _solver(name: str) -> str:
    if name not in SOLVERS:
        raise argparse.ArgumentTypeError(
            f"unknown solver {name!r} (choose from {', '.join(SOLVERS)})")
    return name


def _seconds(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number of seconds: {text!r}") from None
    if v < 0 or math.isnan(v):
        raise argparse.ArgumentTypeError("time limit must be >= 0")
    return v


def _time_limit(text: str):
    return "auto" if text == "auto" else _seconds(text)


def _positive(text: str) -> float:
    v = _seconds(text)
    if v <= 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def _count(minimum: int):
    def parse(text: str) -> int:
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
        if v < minimum:
            raise argparse.ArgumentTypeError(f"must be >= {minimum}")
        return v
    return parse


def load_data(spec: str, binarize: str | None = None) -> Dataset:
    """A LIBSVM file path, or ``synth:<kind>:<n>[:<noise>[:<seed>]]``."""
    if spec.startswith("synth:"):
        parts = spec.split(":")[1:]
        if not 2 <= len(parts) <= 4 or parts[0] not in SYNTHETIC_KINDS:
            raise UsageError(f"bad synthetic spec {spec!r}; kinds: {', '.join(SYNTHETIC_KINDS)}")
        try:
            n = int(parts[1])
            noise = float(parts[2]) if len(parts) > 2 else 0.0
            seed = int(parts[3]) if len(parts) > 3 else 0
            return make_synthetic(parts[0], n, noise, seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    if not os.path.isfile(spec):
        raise UsageError(f"cannot read data file {spec}")
    try:
        return load_libsvm(spec, parse_binarize(binarize))
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=1, sort_keys=True, default=str)
    sys.stdout.write("\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(a) -> int:
    data = load_data(a.data, a.binarize)
    deadline = time_limit_heuristic(len(data)) if a.time_limit == "auto" else a.time_limit
    cfg = TrainConfig(C=a.C, kernel=KernelParams(a.gamma), deadline=deadline, seed=a.seed,
                      epsilon=a.epsilon, budget=a.budget)
    model = get_solver(a.solver)(data, cfg)
    model.save(a.model_out)
    summary = model.summary()
    summary["training_error"] = validation_error(model, data)
    _emit(summary)
    return EXIT_OK


def _splits(a):
    data = load_data(a.data, a.binarize)
    return split(data, SplitSpec((2, 1, 1), a.seed))


def _finish(a, res, tr, te, solver, deadline, extra) -> int:
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = retrain_final(tr, res.best_point, solver, a.final_time_limit,
                          res.best_record.seed)
    model.save(out / "model.json")
    write_history_csv(res, out / "history.csv")
    view = res.deterministic_view()
    result = {
        "solver": solver, "seed": a.seed,
        "deadline": "inf" if math.isinf(deadline) else deadline,
        "best_point": list(view["best_point"]), "best_error": res.best_error,
        "test_error": validation_error(model, te),
        "evaluations": len(res.history),
        "failed_evaluations": sum(r.failed for r in res.history),
        "history": [[r.point.log2_C, r.point.log2_gamma, r.validation_error, r.iteration]
                    for r in res.history],
        **extra,
    }
    _dump(result, out / "result.json")
    timing = {"eval_seconds": res.total_tune_seconds, "final_seconds": model.elapsed,
              "tune_seconds": res.total_tune_seconds + model.elapsed,
              "wall_seconds": res.wall_seconds, "overhead_seconds": res.overhead_seconds}
    _dump(timing, out / "timing.json")
    _emit({k: v for k, v in result.items() if k != "history"} | timing)
    return EXIT_OK


def cmd_tune(a) -> int:
    tr, va, te = _splits(a)
    deadline = time_limit_heuristic(len(tr)) if a.time_limit == "auto" else a.time_limit
    try:
        cfg = TuneConfig(initial_design_size=a.init, iterations=a.iters, batch_size=a.batch,
                         seed=a.seed, solver=a.solver, deadline=deadline, workers=a.workers)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    res = ego_tune(tr, va, cfg)
    return _finish(a, res, tr, te, a.solver, deadline,
                   {"iterations": a.iters, "batch": a.batch, "init": a.init})


def cmd_grid(a) -> int:
    tr, va, te = _splits(a)
    g = log_grid(a.grid_size)
    res = grid_search(tr, va, g, g, a.solver, a.time_limit, a.seed)
    return _finish(a, res, tr, te, a.solver, a.time_limit, {"grid_size": a.grid_size})


def cmd_experiment(a) -> int:
    cfg = ExperimentConfig.load(a.config)
    if a.workers is not None:
        cfg.workers = a.workers
    if a.output_dir is not None:
        cfg.output_dir = a.output_dir
    report = run_experiment(cfg, resume=a.resume)
    _emit({"output_dir": cfg.output_dir, "cells": len(report.cells),
           "failed_cells": [f"{c.dataset}/{c.method}" for c in report.cells if c.failed]})
    return EXIT_OK


def cmd_report(a) -> int:
    if not os.path.isdir(a.run_dir):
        raise ReportError(f"{a.run_dir}: not a directory")
    report = collect_report(a.run_dir)
    paths = report_tables(report, a.run_dir)
    _emit({"written": [str(p) for p in paths]})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="anytime-svm", description="Deadline-limited SVM training and EGO tuning.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_args(sp, solver_default):
        sp.add_argument("data", help="LIBSVM file or synth:<kind>:<n>[:<noise>[:<seed>]]")
        sp.add_argument("--solver", type=_solver, default=solver_default)
        sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
        sp.add_argument("--binarize", default=None, help="one-vs-rest:<class>")

    t = sub.add_parser("train", help="train one model under a deadline")
    data_args(t, "smo")
    t.add_argument("--C", type=_positive, default=1.0)
    t.add_argument("--gamma", type=_positive, default=1.0)
    t.add_argument("--time-limit", type=_time_limit, default=math.inf)
    t.add_argument("--epsilon", type=_positive, default=1e-3)
    t.add_argument("--budget", type=_count(2), default=2048)
    t.add_argument("--model-out", default="model.json")
    t.set_defaults(func=cmd_train)

    u = sub.add_parser("tune", help="EGO tuning with deadline-limited training")
    data_args(u, "lasvm")
    u.add_argument("--iters", type=_count(0), default=10)
    u.add_argument("--batch", type=_count(1), default=20)
    u.add_argument("--init", type=_count(2), default=20)
    u.add_argument("--time-limit", type=_time_limit, default="auto")
    u.add_argument("--final-time-limit", type=_seconds, default=300.0)
    u.add_argument("--workers", type=_count(1), default=1)
    u.add_argument("--out-dir", default="tune-out")
    u.set_defaults(func=cmd_tune)

    g = sub.add_parser("grid", help="grid-search baseline")
    data_args(g, "smo")
    g.add_argument("--grid-size", type=_count(1), default=11)
    g.add_argument("--time-limit", type=_seconds, default=math.inf)
    g.add_argument("--final-time-limit", type=_seconds, default=300.0)
    g.add_argument("--out-dir", default="grid-out")
    g.set_defaults(func=cmd_grid)

    e = sub.add_parser("experiment", help="run a configured experiment")
    e.add_argument("config")
    e.add_argument("--workers", type=_count(1), default=None)
    e.add_argument("--output-dir", default=None)
    e.add_argument("--resume", action="store_true",
                   help="keep cells already recorded in the output directory")
    e.set_defaults(func=cmd_experiment)

    r = sub.add_parser("report", help="regenerate tables from a run directory")
    r.add_argument("run_dir")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(a.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.func(a)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, TrainingError, TuningError, ReportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
