import csv
import json

import pytest

from anytime_svm.cli import main
from anytime_svm.solvers import SvmModel

SMALL = "synth:two-gaussians:120:0:3"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


class TestUsageErrors:
    def test_unknown_solver(self, capsys):
        code, _, err = run(capsys, "train", SMALL, "--solver", "cvm")
        assert code == 2 and "unknown solver 'cvm'" in err

    def test_no_command(self, capsys):
        assert run(capsys)[0] == 2

    def test_bad_synthetic_spec(self, capsys, tmp_path):
        assert run(capsys, "train", "synth:spirals:100")[0] == 2

    def test_missing_file(self, capsys, tmp_path):
        assert run(capsys, "train", tmp_path / "nope.libsvm")[0] == 2

    def test_negative_time_limit(self, capsys):
        assert run(capsys, "train", SMALL, "--time-limit", "-1")[0] == 2

    def test_unknown_dataset_in_config(self, capsys, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("datasets: [mnist-ish]\nsolvers: [lasvm]\n")
        code, _, err = run(capsys, "experiment", cfg)
        assert code == 2 and "mnist-ish" in err

    def test_report_on_empty_dir(self, capsys, tmp_path):
        code, _, err = run(capsys, "report", tmp_path)
        assert code == 1 and "experiment.json" in err


def test_train_writes_model(capsys, tmp_path):
    path = tmp_path / "m.json"
    code, out, _ = run(capsys, "train", SMALL, "--C", 4, "--gamma", 0.5, "--model-out", path)
    assert code == 0
    summary = json.loads(out)
    assert summary["training_error"] == 0.0
    assert SvmModel.load(path).n_support == summary["n_support"]


def test_train_libsvm_file(capsys, tmp_path):
    data = tmp_path / "d.libsvm"
    data.write_text("+1 1:1.0\n-1 1:-1.0\n+1 1:0.9 2:0.1\n-1 1:-1.1\n")
    code, out, _ = run(capsys, "train", data, "--model-out", tmp_path / "m.json")
    assert code == 0 and json.loads(out)["training_error"] == 0.0


class TestTune:
    def test_zero_iterations_gives_initial_design(self, capsys, tmp_path):
        code, _, _ = run(capsys, "tune", SMALL, "--iters", 0, "--time-limit", 1,
                         "--final-time-limit", 5, "--out-dir", tmp_path)
        assert code == 0
        rows = list(csv.DictReader(open(tmp_path / "history.csv")))
        assert len(rows) == 20
        assert all(r["iter"] == "0" for r in rows)

    def test_repeatable_result(self, capsys, tmp_path):
        args = ["tune", SMALL, "--iters", 1, "--batch", 3, "--init", 5, "--time-limit", 1,
                "--final-time-limit", 5, "--seed", 4]
        assert run(capsys, *args, "--out-dir", tmp_path / "a")[0] == 0
        assert run(capsys, *args, "--out-dir", tmp_path / "b")[0] == 0
        a = (tmp_path / "a" / "result.json").read_bytes()
        assert a == (tmp_path / "b" / "result.json").read_bytes()
        assert json.loads(a)["evaluations"] == 8


def test_grid_time_accounting(capsys, tmp_path):
    code, _, _ = run(capsys, "grid", "synth:checkerboard:1200:0.1:2", "--grid-size", 3,
                     "--time-limit", 1,
                     "--out-dir", tmp_path)
    assert code == 0
    timing = json.loads((tmp_path / "timing.json").read_text())
    assert timing["eval_seconds"] == pytest.approx(timing["wall_seconds"], rel=0.01)
    assert json.loads((tmp_path / "result.json").read_text())["evaluations"] == 9


def test_experiment_then_report(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({
        "datasets": [{"name": "g", "kind": "two-gaussians", "n": 60, "seed": 0},
                     {"name": "x", "kind": "xor-rings", "n": 60, "seed": 0}],
        "solvers": ["lasvm"], "seeds": [0], "time_limit": 0.5, "final_deadline": 2,
        "tune": {"initial_design_size": 3, "iterations": 1, "batch_size": 2},
        "baseline": {"grid_size": 2}}))
    out_dir = tmp_path / "out"
    code, out, _ = run(capsys, "experiment", cfg, "--output-dir", out_dir)
    assert code == 0 and json.loads(out)["cells"] == 4
    before = (out_dir / "errors.csv").read_bytes()
    (out_dir / "errors.csv").unlink()
    assert run(capsys, "report", out_dir)[0] == 0
    assert (out_dir / "errors.csv").read_bytes() == before
