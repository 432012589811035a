"""End-to-end acceptance checks, one test per numbered criterion.

Each test records a PASS/FAIL line that is repeated in the terminal summary.
Criteria 4 and 5 share one experiment run, which takes a long time; point
``ANYTIME_SVM_ACCEPTANCE_DIR`` at a directory to keep (and resume) it.
"""

import itertools
import math
import os
import time

import numpy as np
import pytest
from scipy.stats import qmc

from anytime_svm.dataio import Dataset, make_synthetic
from anytime_svm.harness import ExperimentConfig, run_experiment, time_limit_heuristic
from anytime_svm.kernel import KernelParams
from anytime_svm.solvers import TrainConfig, train
from anytime_svm.stats import ResultMatrix, friedman, holm_stepdown
from anytime_svm.surrogate import HyperPoint, expected_improvement, fit
from anytime_svm.tuner import TuneConfig, ego_minimize, minimize_lcb

from oracles import friedman_direct, qp_dual_oracle, stub_surface
from test_surrogate import bumps
from test_tuner import grid_lcb_argmin, stub

clock = time.perf_counter


def warm_up():
    ds = make_synthetic("checkerboard", 60, 0.1, 0)
    for s in ("smo", "lasvm", "bsgd"):
        train(s, ds, TrainConfig(deadline=0.05, budget=8))


def test_criterion_1_solver_correctness(criterion):
    warm_up()
    worst = {"smo": 0.0, "lasvm": 0.0}
    rng = np.random.default_rng(2024)
    start = clock()
    instances = 0
    while instances < 20:
        n = int(rng.integers(2, 9))
        X = rng.normal(size=(n, 2))
        y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        if abs(y.sum()) == n:
            continue
        C, gamma = 2.0 ** rng.uniform(-3, 5), 2.0 ** rng.uniform(-3, 2)
        ds = Dataset(X, y, "tiny")
        _, ref = qp_dual_oracle(X, y, C, gamma)
        for s in worst:
            m = train(s, ds, TrainConfig(C=C, kernel=KernelParams(gamma)))
            worst[s] = max(worst[s], abs(m.dual_objective - ref) / abs(ref))
        instances += 1
    elapsed = clock() - start
    ok = worst["smo"] <= 1e-3 and worst["lasvm"] <= 1e-2 and elapsed < 5.0
    criterion(1, ok, f"max rel gap smo {worst['smo']:.1e}, lasvm {worst['lasvm']:.1e}, "
                     f"{elapsed:.2f}s")
    assert ok


def test_criterion_2_deadline_contract(criterion):
    warm_up()
    ds = make_synthetic("checkerboard", 20_000, 0.1, 7)
    rng = np.random.default_rng(5)
    runs = list(itertools.islice(itertools.cycle(
        itertools.product((0.01, 0.1, 1.0), ("smo", "lasvm", "bsgd"))), 100))
    violations, worst = [], -math.inf
    for T, solver in runs:
        cfg = TrainConfig.from_log2(float(rng.uniform(-5, 15)), float(rng.uniform(-5, 5)),
                                    deadline=T, seed=int(rng.integers(1 << 30)))
        t0 = clock()
        m = train(solver, ds, cfg)
        took = clock() - t0
        update = m.elapsed / max(m.iterations, 1)
        slack = max(update, 0.010)
        worst = max(worst, took - T)
        if took > T + slack:
            violations.append((solver, T, took))
    criterion(2, not violations, f"{len(violations)} violations in 100 runs, "
                                 f"worst overrun {worst * 1e3:.1f} ms")
    assert not violations


def test_criterion_3_anytime_monotone(criterion):
    warm_up()
    kinds = ("two-gaussians", "checkerboard", "xor-rings")
    datasets = [make_synthetic(kinds[i % 3], 20_000, 0.05 * (i % 4), 100 + i)
                for i in range(10)]
    held = total = 0
    for i, ds in enumerate(datasets):
        for solver in ("smo", "lasvm"):
            for T in (0.1, 0.5, 1.0, 2.0):
                cfg = TrainConfig.from_log2(2.0 + i % 5, -1.0 + i % 3, seed=i)
                a = train(solver, ds, cfg.with_(deadline=T))
                b = train(solver, ds, cfg.with_(deadline=2 * T))
                total += 1
                held += b.dual_objective >= a.dual_objective
    criterion(3, held == total, f"{held}/{total} comparisons hold")
    assert held == total


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    keep = os.environ.get("ANYTIME_SVM_ACCEPTANCE_DIR")
    out = keep or str(tmp_path_factory.mktemp("acceptance"))
    cfg = ExperimentConfig.from_dict({
        "datasets": ["two-gaussians", "checkerboard", "xor-rings"],
        "solvers": ["lasvm", "bsgd"],
        "seeds": [0, 1, 2],
        "time_limit": "auto",
        "output_dir": out,
    })
    return run_experiment(cfg, resume=bool(keep))


def test_criterion_4_speed_and_accuracy(criterion, experiment):
    target = math.log10(5)
    parts, ok = [], True
    for d in experiment.datasets:
        base, ego = experiment.cell(d, "grid"), experiment.cell(d, "lasvm")
        good = (not ego.failed and not base.failed
                and abs(ego.test_error - base.test_error) <= 0.02
                and ego.timing_factor >= target)
        ok &= good
        tf = "n/a" if ego.timing_factor is None else f"{ego.timing_factor:+.2f}"
        parts.append(f"{d}: err {ego.test_error} vs {base.test_error}, factor {tf}")
    criterion(4, ok, "; ".join(parts))
    assert ok


def test_criterion_5_solver_differentiation(criterion, experiment):
    wins = []
    for d in experiment.datasets:
        la, bs = experiment.cell(d, "lasvm"), experiment.cell(d, "bsgd")
        wins.append(not la.failed and (bs.failed or la.test_error <= bs.test_error))
    detail = ", ".join(f"{d}: lasvm {experiment.cell(d, 'lasvm').test_error} / "
                       f"bsgd {experiment.cell(d, 'bsgd').test_error}"
                       for d in experiment.datasets)
    criterion(5, sum(wins) >= 2, f"lasvm <= bsgd on {sum(wins)}/3 ({detail})")
    assert sum(wins) >= 2


def test_criterion_6_statistics(criterion):
    start = clock()
    worst = 0.0
    rng = np.random.default_rng(6)
    for _ in range(50):
        N, k = int(rng.integers(2, 15)), int(rng.integers(2, 8))
        M = np.round(rng.uniform(size=(N, k)), 2)
        stat, p, _ = friedman(ResultMatrix.from_array(M))
        ref_stat, ref_p, _ = friedman_direct(M)
        worst = max(worst, abs(stat - ref_stat), abs(p - ref_p))
    first = [e.rejected for e in holm_stepdown([0.01, 0.02, 0.04], 0.05)]
    second = [e.rejected for e in holm_stepdown([0.02, 0.03, 0.04], 0.05)]
    elapsed = clock() - start
    ok = worst <= 1e-10 and first == [True] * 3 and second == [False] * 3 and elapsed < 1.0
    criterion(6, ok, f"max deviation {worst:.1e}, Holm {first}/{second}, {elapsed:.2f}s")
    assert ok


def test_criterion_7_surrogate_quality(criterion):
    interp, ei_min, lcb_dist = 0.0, math.inf, 0.0
    rng = np.random.default_rng(7)
    for seed in range(10):
        f = bumps(seed)
        U = qmc.LatinHypercube(d=2, seed=seed).random(20)
        y = f(U)
        s = fit([(HyperPoint.from_unit(u), float(v)) for u, v in zip(U, y)])
        mu, _ = s.predict_unit(U)
        interp = max(interp, float(np.max(np.abs(mu - y))))
        Q = rng.uniform(size=(1000, 2))
        m, sd = s.predict_unit(Q)
        ei_min = min(ei_min, float(expected_improvement(m, sd, float(y.min())).min()))
        lam = float(rng.exponential(1.0))
        found = minimize_lcb(s, np.array([lam]), np.random.default_rng(seed))[0]
        lcb_dist = max(lcb_dist, float(np.linalg.norm(found - grid_lcb_argmin(s, lam))))
    ok = interp <= 1e-4 and ei_min >= 0 and lcb_dist <= 0.02
    criterion(7, ok, f"interpolation {interp:.1e}, min EI {ei_min:.1e} over 10^4 queries, "
                     f"LCB argmin distance {lcb_dist:.3f}")
    assert ok


def test_criterion_8_ego_stub(criterion):
    start = clock()
    hits = 0
    for seed in range(10):
        r = ego_minimize(stub, TuneConfig(seed=seed, solver="smo"))
        assert len(r.history) == 220
        hits += max(abs(r.best_point.log2_C - 3), abs(r.best_point.log2_gamma + 5)) <= 1.0
    elapsed = clock() - start
    assert stub_surface(3.0, -5.0) == 0.0
    ok = hits >= 9 and elapsed < 30.0
    criterion(8, ok, f"{hits}/10 runs within 1.0 of (3, -5), {elapsed:.1f}s")
    assert ok


def test_criterion_9_heuristic(criterion):
    got = [time_limit_heuristic(n) for n in (10, 10**4, 10**5)]
    ok = got == [4.0, 32.0, 64.0]
    criterion(9, ok, f"heuristic gives {got}")
    assert ok
