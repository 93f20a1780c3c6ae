"""Report, manifest and plot-data writers."""

import json
import os

import numpy as np
import pandas as pd
import pytest

from src import __version__
from src.core.attribution import back_project
from src.core.network import NetworkSpec, init_network
from src.experiments.harness import CVConfig, permuted_cv
from src.experiments.reporting import banner, input_hashes, json_safe, write_cv_outputs, write_run_manifest
from src.visualization.plot_data import PlotDataWriter


class Constant:
    def predict_labels(self, X):
        return np.zeros(len(X), dtype=int)

    def test_loss(self, X, y):
        return float("nan")


def _report(data, factory=lambda train_set, seed: Constant(), **cell):
    return permuted_cv(data, factory, CVConfig(n_permutations=2), cell=cell)


def _read_dat(path):
    with open(path) as f:
        return f.read().splitlines()


class TestReports:

    def test_cv_outputs(self, small_data, tmp_path):
        paths = write_cv_outputs([_report(small_data, model="const", layers=1, neurons=4, scale=8)], str(tmp_path))
        with open(paths["report"]) as f:
            doc = json.load(f)
        assert (doc["format"], doc["version"]) == ("connlab.report", 1)
        report = doc["reports"][0]
        assert report["mean_accuracy"] == 0.5
        assert len(report["records"]) == 4
        # nan test losses are written as null
        assert all(r["loss"] is None for r in report["records"])
        summary = pd.read_csv(paths["summary"])
        assert summary.iloc[0].tolist() == [1, 4, 8, 0.5, 0.0]

    def test_all_failed_report_writes_nulls(self, small_data, tmp_path):
        def broken(train_set, seed):
            raise RuntimeError("no model")

        paths = write_cv_outputs([_report(small_data, broken)], str(tmp_path))
        with open(paths["report"]) as f:
            report = json.load(f)["reports"][0]
        assert report["mean_accuracy"] is None and report["failed_permutations"] == [0, 1]

    def test_json_safe(self):
        doc = json_safe({"a": np.float64(1.5), "b": np.arange(2), 3: [np.inf, np.int64(4)]})
        assert doc == {"a": 1.5, "b": [0, 1], "3": [None, 4]}


class TestManifest:

    def test_contents(self, tmp_path):
        data_file = tmp_path / "input.csv"
        data_file.write_text("x\n")
        path = write_run_manifest(str(tmp_path / "out"), "eval", {"k": 1}, 9, inputs=[str(data_file)], outputs=["/a/b/eval.json"])
        with open(path) as f:
            manifest = json.load(f)
        assert manifest["command"] == "eval" and manifest["version"] == __version__
        assert manifest["seed"] == 9 and manifest["config"] == {"k": 1}
        assert manifest["outputs"] == ["eval.json"]
        assert list(manifest["inputs"]) == ["input.csv"]
        assert len(manifest["inputs"]["input.csv"]) == 64

    def test_directory_hash_keys(self, tmp_path):
        root = tmp_path / "cohort"
        (root / "matrices").mkdir(parents=True)
        (root / "manifest.csv").write_text("a\n")
        (root / "matrices" / "s1.csv").write_text("1\n")
        assert sorted(input_hashes([str(root)])) == ["cohort/manifest.csv", "cohort/matrices/s1.csv"]

    def test_banner(self):
        text = banner("Run", {"Result": {"accuracy": 0.5}, "Table": pd.DataFrame({"a": [1]})})
        lines = text.splitlines()
        assert lines[0] == "=" * 80 and lines[1] == "RUN"
        assert "  accuracy: 0.5" in lines


class TestPlotData:

    def test_accuracy_grid_blocks(self, tmp_path):
        summary = pd.DataFrame({
            "layers": [1, 1, 2, 2],
            "neurons": [50, 20, 20, 50],
            "scale": [25, 25, 25, 25],
            "mean_acc": [0.8, 0.7, 0.75, 0.85],
            "std_acc": [0.01, 0.02, 0.03, 0.04],
        })
        lines = _read_dat(PlotDataWriter(str(tmp_path)).accuracy_grid(summary))
        assert lines[0] == "# neurons mean_acc std_acc"
        data = [l for l in lines if l and not l.startswith("#")]
        assert [float(l.split()[0]) for l in data] == [20, 50, 20, 50]
        assert lines.count("") == 2

    def test_loss_trace(self, tmp_path):
        path = PlotDataWriter(str(tmp_path)).loss_trace([3.0, 2.0, 1.0], {"data_loss": [2.5, 1.5, 0.5]})
        values = np.loadtxt(path)
        np.testing.assert_array_equal(values[:, 0], [1, 2, 3])
        np.testing.assert_array_equal(values[:, 2], [2.5, 1.5, 0.5])

    def test_sweep_table(self, tmp_path):
        table = pd.DataFrame({"policy": ["rate:0", "R2"], "mc_accuracy": [0.9, 0.8], "wa_accuracy": [0.85, 0.85]})
        lines = _read_dat(PlotDataWriter(str(tmp_path)).dropout_sweep(table))
        assert lines[0] == "# index mc_accuracy wa_accuracy"
        assert lines[1] == "# rate:0 R2"

    def test_pattern_matrix(self, tmp_path):
        pattern = back_project(init_network(NetworkSpec(10, (3,)), 0), 1, 0)
        writer = PlotDataWriter(str(tmp_path))
        matrix = np.loadtxt(writer.pattern_matrix(pattern, "top"))
        assert matrix.shape == (5, 5)
        assert writer.written == [os.path.join(str(tmp_path), "top.dat")]
