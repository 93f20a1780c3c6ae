"""End-to-end runs of the connlab command line."""

import filecmp
import json
import os

import pandas as pd
import pytest

from src.cli import load_model, main
from src.core.baselines import LinearModel
from src.core.errors import NetworkFormatError
from src.core.network import Network

QUIET = ["--no-progress", "--log-level", "WARNING"]
FAST = ["--iterations", "20"]


def run(*argv):
    return main([str(a) for a in argv] + QUIET)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "cohort"
    assert run("gen-data", "--nodes", 6, "--subjects", 24, "--timepoints", 40, "--effect", 0.8, "--seed", 7, "--out", out) == 0
    return str(out)


@pytest.fixture(scope="module")
def model_file(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert run("train", "--data", dataset, "--layers", 2, "--neurons", 8, *FAST, "--seed", 1, "--out", out) == 0
    return str(out / "model.json")


def _same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    assert not cmp.left_only and not cmp.right_only
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    assert not mismatch and not errors
    for sub in cmp.common_dirs:
        _same_tree(os.path.join(a, sub), os.path.join(b, sub))


class TestGenData:

    def test_layout(self, dataset):
        files = set(os.listdir(dataset))
        assert {"manifest.csv", "dataset.json", "run_manifest.json"} <= files
        manifest = pd.read_csv(os.path.join(dataset, "manifest.csv"))
        assert list(manifest.columns) == ["subject_id", "label", "matrix_file"]
        assert len(manifest) == 24

    def test_repeat_run_is_byte_identical(self, tmp_path):
        args = ["gen-data", "--nodes", 5, "--subjects", 8, "--timepoints", 30, "--seed", 3]
        assert run(*args, "--out", tmp_path / "a") == 0
        assert run(*args, "--out", tmp_path / "b") == 0
        _same_tree(tmp_path / "a", tmp_path / "b")

    def test_seed_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CONNLAB_SEED", "5")
        assert run("gen-data", "--nodes", 4, "--subjects", 4, "--timepoints", 20, "--out", tmp_path) == 0
        with open(tmp_path / "run_manifest.json") as f:
            assert json.load(f)["seed"] == 5

    def test_bad_seed_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CONNLAB_SEED", "seven")
        with pytest.raises(SystemExit) as info:
            run("gen-data", "--out", tmp_path)
        assert info.value.code == 2


class TestUsage:

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as info:
            main(["train", "--data", "x", "--bogus"])
        assert info.value.code == 2

    def test_unknown_config_key(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"nodes": 5, "colour": "blue"}))
        with pytest.raises(SystemExit) as info:
            main(["gen-data", "--config", str(config), "--out", str(tmp_path / "out")])
        assert info.value.code == 2

    @pytest.mark.parametrize("command, values", [
        ("repeat", {"layers": [1, 2]}),
        ("repeat", {"no_progress": "yes"}),
        ("cv", {"model": "forest"}),
        ("cv", {"layers": {"n": 2}}),
        ("mcdrop", {"rates": ["rate:1.5"]}),
    ])
    def test_ill_typed_config_values(self, tmp_path, command, values):
        config = tmp_path / "config.json"
        config.write_text(json.dumps(values))
        argv = [command, "--config", str(config), "--data", "x", "--out", str(tmp_path / "out")]
        if command == "mcdrop":
            argv += ["--model-file", "m.json"]
        with pytest.raises(SystemExit) as info:
            main(argv)
        assert info.value.code == 2

    def test_config_supplies_defaults_and_flags_win(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"nodes": 5, "subjects": 6, "timepoints": 30}))
        out = tmp_path / "out"
        assert main(["gen-data", "--config", str(config), "--subjects", "8", "--out", str(out)] + QUIET) == 0
        with open(out / "run_manifest.json") as f:
            synthetic = json.load(f)["config"]["synthetic"]
        assert (synthetic["n_nodes"], synthetic["n_subjects"]) == (5, 8)

    def test_runtime_error_is_one_line(self, tmp_path, capsys):
        assert run("eval", "--data", tmp_path / "missing", "--model-file", tmp_path / "none.json", "--out", tmp_path) == 1
        err = capsys.readouterr().err.strip().splitlines()
        assert err[-1].startswith("connlab: error: ")


class TestTrainEval:

    def test_train_outputs(self, model_file):
        out = os.path.dirname(model_file)
        trace = pd.read_csv(os.path.join(out, "loss_trace.csv"))
        assert list(trace.columns) == ["iteration", "total_loss", "data_loss"]
        assert len(trace) == 20
        with open(os.path.join(out, "run_manifest.json")) as f:
            manifest = json.load(f)
        assert manifest["command"] == "train" and manifest["seed"] == 1
        assert "model.json" in manifest["outputs"]
        assert isinstance(load_model(model_file), Network)

    def test_eval(self, dataset, model_file, tmp_path):
        assert run("eval", "--data", dataset, "--model-file", model_file, "--out", tmp_path) == 0
        with open(tmp_path / "eval.json") as f:
            doc = json.load(f)
        assert doc["n_subjects"] == 24
        assert 0.0 <= doc["accuracy"] <= 1.0
        assert set(doc["per_class_accuracy"]) == {"M", "F"}

    def test_linear_svm(self, dataset, tmp_path):
        assert run("train", "--data", dataset, "--model", "linear-svm", "--epochs", 5, "--out", tmp_path / "svm") == 0
        model_path = tmp_path / "svm" / "model.json"
        assert isinstance(load_model(str(model_path)), LinearModel)
        assert len(pd.read_csv(tmp_path / "svm" / "objective_trace.csv")) == 5
        assert run("eval", "--data", dataset, "--model-file", model_path, "--out", tmp_path / "ev") == 0

    def test_gnuplot_files(self, dataset, tmp_path):
        assert run("train", "--data", dataset, *FAST, "--gnuplot", "--out", tmp_path) == 0
        assert os.path.exists(tmp_path / "plots" / "loss_trace.dat")

    def test_load_model_rejects_other_json(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text(json.dumps({"format": "something"}))
        with pytest.raises(NetworkFormatError):
            load_model(str(path))


class TestCV:

    def test_worker_count_does_not_change_outputs(self, dataset, tmp_path):
        args = ["cv", "--data", dataset, "--layers", "1,2", "--neurons", 6, "--permutations", 2, *FAST, "--seed", 3]
        assert run(*args, "--jobs", 1, "--out", tmp_path / "one") == 0
        assert run(*args, "--jobs", 3, "--out", tmp_path / "three") == 0
        for name in ("report.json", "summary.csv"):
            assert filecmp.cmp(tmp_path / "one" / name, tmp_path / "three" / name, shallow=False)
        summary = pd.read_csv(tmp_path / "one" / "summary.csv")
        assert list(summary.columns) == ["layers", "neurons", "scale", "mean_acc", "std_acc"]
        assert summary["layers"].tolist() == [1, 2]

    def test_linear_svm(self, dataset, tmp_path):
        assert run("cv", "--data", dataset, "--model", "linear-svm", "--epochs", 3, "--permutations", 2, "--out", tmp_path) == 0
        with open(tmp_path / "report.json") as f:
            doc = json.load(f)
        assert doc["format"] == "connlab.report"
        assert doc["reports"][0]["cell"]["model"] == "linear-svm"

    def test_scalar_config_values_for_list_options(self, dataset, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"layers": 2, "neurons": "6", "permutations": 1, "iterations": 5}))
        assert run("cv", "--config", config, "--data", dataset, "--out", tmp_path / "out") == 0
        summary = pd.read_csv(tmp_path / "out" / "summary.csv")
        assert summary[["layers", "neurons"]].values.tolist() == [[2, 6]]


class TestRank:

    def test_outputs(self, dataset, model_file, tmp_path):
        assert run("rank", "--model-file", model_file, "--data", dataset, "--max-rank", 2, "--k-pairs", "1,all", "--out", tmp_path) == 0
        ranking = pd.read_csv(tmp_path / "ranking.csv")
        assert len(ranking) == 4
        curve = pd.read_csv(tmp_path / "truncation.csv")
        assert curve["k_pairs"].astype(str).tolist() == ["1", "all"]
        patterns = os.listdir(tmp_path / "patterns")
        assert any(p.endswith(".csv") for p in patterns) and any(p.endswith(".json") for p in patterns)

    def test_linear_model_is_unsupported(self, dataset, tmp_path):
        assert run("train", "--data", dataset, "--model", "linear-svm", "--epochs", 2, "--out", tmp_path / "svm") == 0
        assert run("rank", "--model-file", tmp_path / "svm" / "model.json", "--out", tmp_path / "rank") == 1


class TestMCDrop:

    def test_no_dropout_gives_zero_uncertainty(self, dataset, model_file, tmp_path):
        assert run(
            "mcdrop", "--model-file", model_file, "--data", dataset, "--rates", "rate:0",
            "--policy", "rate:0", "--T", 5, "--subset-size", 4, "--out", tmp_path,
        ) == 0
        unc = pd.read_csv(tmp_path / "uncertainty_sweep.csv")
        assert unc["subset"].tolist() == ["F", "F1", "FM", "M1", "M"]
        assert (unc["mean_uncertainty"] == 0.0).all()
        with open(tmp_path / "mc_records.json") as f:
            records = json.load(f)
        assert all(r["uncertainty"] == 0.0 for r in records["uncertainty_sweep"])

    def test_default_sweep(self, dataset, model_file, tmp_path):
        assert run("mcdrop", "--model-file", model_file, "--data", dataset, "--T", 5, "--gnuplot", "--out", tmp_path) == 0
        sweep = pd.read_csv(tmp_path / "dropout_sweep.csv")
        assert sweep["policy"].tolist() == ["rate:0", "rate:0.2", "rate:0.5", "rate:0.8", "R2"]
        assert os.path.exists(tmp_path / "plots" / "uncertainty_sweep.dat")

    def test_rates_from_config_list(self, dataset, model_file, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"rates": ["rate:0", "R2"], "T": 4}))
        out = tmp_path / "out"
        assert run("mcdrop", "--config", config, "--model-file", model_file, "--data", dataset, "--out", out) == 0
        sweep = pd.read_csv(out / "dropout_sweep.csv")
        assert sweep["policy"].tolist() == ["rate:0", "R2"]


class TestRepeat:

    def test_outputs(self, dataset, tmp_path):
        assert run("repeat", "--data", dataset, "--layers", 1, "--neurons", 6, "--permutations", 2, *FAST, "--out", tmp_path) == 0
        pairs = pd.read_csv(tmp_path / "correlations.csv")
        assert len(pairs) == 6
        with open(tmp_path / "correlation_summary.json") as f:
            summary = json.load(f)
        assert summary["n_patterns"] == 4 and summary["aligned"] is True
