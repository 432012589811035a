import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anytime_svm.dataio import Dataset, SparseVector, make_synthetic
from anytime_svm.kernel import KernelParams
from anytime_svm.solvers import (SvmModel, TrainConfig, TrainingError, decision_function,
                                 decision_value, predict, train, validation_error, zero_model)
from anytime_svm.solvers.lasvm import LasvmState

from oracles import gram, qp_dual_oracle

DUAL = ("smo", "lasvm")
ALL = ("smo", "lasvm", "bsgd")


def tiny_instance(seed, n=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(2, 9))
    X = rng.normal(size=(n, 2))
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    rng.shuffle(y)
    C = float(2.0 ** rng.uniform(-3, 5))
    gamma = float(2.0 ** rng.uniform(-3, 2))
    return Dataset(X, y, f"tiny{seed}"), C, gamma


class TestTwoPoints:
    """x1 = (1), x2 = (-1); the single free dual variable clips at C = 1."""

    ds = Dataset(np.array([[1.0], [-1.0]]), np.array([1.0, -1.0]), "two")

    @pytest.mark.parametrize("solver", DUAL)
    def test_alphas_and_bias(self, solver):
        m = train(solver, self.ds, TrainConfig(C=1.0, kernel=KernelParams(1.0)))
        # unconstrained optimum 1 / (1 - e^-4) > 1 clips to C
        assert 1.0 / (1.0 - math.exp(-4)) > 1.0
        order = np.argsort(-m.coef)
        np.testing.assert_allclose(m.coef[order], [1.0, -1.0], rtol=0, atol=1e-12)
        assert m.bias == pytest.approx(0.0, abs=1e-12)
        assert m.converged
        assert decision_value(m, SparseVector((1,), (1.0,))) > 0


@pytest.mark.parametrize("solver,rel", [("smo", 1e-3), ("lasvm", 1e-2)])
@pytest.mark.parametrize("seed", range(6))
def test_dual_matches_oracle(solver, rel, seed):
    ds, C, gamma = tiny_instance(seed)
    if not ds.has_both_classes():
        pytest.skip("single class")
    _, ref = qp_dual_oracle(ds.X, ds.y, C, gamma)
    m = train(solver, ds, TrainConfig(C=C, kernel=KernelParams(gamma)))
    assert m.dual_objective == pytest.approx(ref, rel=rel)


@pytest.mark.parametrize("solver", DUAL)
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 40))
def test_feasible_expansion(solver, seed, n):
    ds, C, gamma = tiny_instance(seed, n)
    m = train(solver, ds, TrainConfig(C=C, kernel=KernelParams(gamma)))
    assert np.all(m.coef != 0)
    assert np.all(np.abs(m.coef) <= C * (1 + 1e-12))
    assert abs(m.coef.sum()) <= 1e-9 * C * n
    # objective recomputed from the expansion itself
    K = gram(m.sv, gamma)
    recomputed = float(np.sum(np.abs(m.coef)) - 0.5 * m.coef @ K @ m.coef)
    assert m.dual_objective == pytest.approx(recomputed, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("solver", ALL)
def test_zero_deadline(solver):
    ds = make_synthetic("two-gaussians", 50, 0.0, 0)
    m = train(solver, ds, TrainConfig(deadline=0.0))
    assert m.n_support == 0 and not m.converged and m.bias == 0.0
    assert m.elapsed < 0.05


@pytest.mark.parametrize("solver", ALL)
def test_single_class_rejected(solver):
    ds = Dataset(np.ones((3, 2)), np.ones(3), "one")
    with pytest.raises(TrainingError):
        train(solver, ds, TrainConfig())


@pytest.mark.parametrize("solver", DUAL)
def test_trace_monotone(solver):
    ds = make_synthetic("checkerboard", 1500, 0.1, 2)
    m = train(solver, ds, TrainConfig(C=8.0, kernel=KernelParams(2.0), deadline=0.3, trace=True))
    objs = [o for _, o in m.trace]
    assert len(objs) > 5
    assert all(b >= a - 1e-9 * abs(a) for a, b in zip(objs, objs[1:]))


def test_lasvm_two_epochs_dominate_one():
    ds = make_synthetic("xor-rings", 400, 0.05, 3)
    cfg = TrainConfig(C=4.0, kernel=KernelParams(1.0), seed=9)
    one, two = LasvmState(ds, cfg), LasvmState(ds, cfg)
    one.step(len(ds))
    two.step(2 * len(ds))
    assert two.objective() >= one.objective()


@pytest.mark.parametrize("solver", ALL)
def test_deterministic_without_deadline(solver):
    ds = make_synthetic("xor-rings", 300, 0.05, 1)
    cfg = TrainConfig(C=2.0, kernel=KernelParams(0.5), seed=4, budget=64)
    a, b = train(solver, ds, cfg), train(solver, ds, cfg)
    assert a.sv.tobytes() == b.sv.tobytes() and a.coef.tobytes() == b.coef.tobytes()
    assert a.bias == b.bias


class TestBsgd:
    def test_separable_training_error(self):
        ds = make_synthetic("two-gaussians", 200, 0.0, 1)
        m = train("bsgd", ds, TrainConfig(C=10.0, kernel=KernelParams(0.5), budget=400,
                                          deadline=30.0))
        assert validation_error(m, ds) == 0.0

    @pytest.mark.parametrize("budget", [1, 2, 7])
    def test_budget_bound(self, budget):
        ds = make_synthetic("checkerboard", 300, 0.1, 0)
        m = train("bsgd", ds, TrainConfig(C=4.0, kernel=KernelParams(1.0), budget=budget))
        assert m.n_support <= budget

    def test_no_bias(self):
        ds = make_synthetic("two-gaussians", 100, 0.0, 0)
        assert train("bsgd", ds, TrainConfig()).bias == 0.0


class TestPrediction:
    def test_empty_model(self):
        m = zero_model("smo", TrainConfig(), 3)
        assert decision_value(m, SparseVector((2,), (1.0,))) == 0.0
        assert predict(m, np.zeros((2, 3))).tolist() == [1.0, 1.0]

    def test_single_sv_identity(self):
        m = SvmModel(np.array([[0.5, -1.0]]), np.array([1.0]), 0.0, KernelParams(3.0))
        assert decision_value(m, SparseVector((1, 2), (0.5, -1.0))) == 1.0

    def test_all_positive_on_balanced(self):
        m = SvmModel(np.zeros((0, 1)), np.zeros(0), 1.0, KernelParams(1.0))
        ds = make_synthetic("two-gaussians", 100, 0.0, 0)
        assert validation_error(m, ds) == 0.5

    def test_random_labels(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(10_000, 2))
        y = np.where(rng.random(10_000) < 0.5, 1.0, -1.0)
        m = SvmModel(np.array([[0.0, 0.0]]), np.array([1.0]), -0.5, KernelParams(1.0))
        assert abs(validation_error(m, Dataset(X, y, "r")) - 0.5) <= 0.02

    def test_empty_dataset(self):
        m = zero_model("smo", TrainConfig(), 1)
        with pytest.raises(ValueError):
            validation_error(m, Dataset(np.zeros((0, 1)), np.zeros(0), "e"))

    def test_vectorised_matches_scalar(self):
        ds = make_synthetic("xor-rings", 200, 0.0, 0)
        m = train("smo", ds, TrainConfig(C=2.0, kernel=KernelParams(0.7)))
        fast = decision_function(m, ds.X[:20])
        slow = [decision_value(m, ds.example(i)) for i in range(20)]
        np.testing.assert_allclose(fast, slow, rtol=1e-12, atol=1e-12)

    def test_persistence_round_trip(self, tmp_path):
        ds = make_synthetic("checkerboard", 200, 0.0, 0)
        m = train("lasvm", ds, TrainConfig(C=4.0, kernel=KernelParams(2.0)))
        m.save(tmp_path / "m.json")
        back = SvmModel.load(tmp_path / "m.json")
        assert decision_function(back, ds.X).tobytes() == decision_function(m, ds.X).tobytes()
        assert back.solver == "lasvm" and back.converged == m.converged
