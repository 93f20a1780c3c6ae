"""Permuted cross validation, structure sweeps and the repeatability study."""

import json

import numpy as np
import pytest

from src.core.baselines import SVMConfig
from src.core.errors import InvalidInputError, ReportIntegrityError
from src.core.network import NetworkSpec, TrainConfig, init_network, train
from src.core.rng import derive_seed
from src.experiments.harness import (
    CVConfig,
    StructureGrid,
    dnn_factory,
    fold_assignments,
    linear_svm_factory,
    permuted_cv,
    repeatability_study,
    select_feature,
    structure_sweep,
    summary_frame,
)

FAST = TrainConfig(iterations=10, seed=0)


class ConstantClassifier:
    def __init__(self, label=0):
        self.label = label

    def predict_labels(self, X):
        return np.full(len(X), self.label)

    def test_loss(self, X, y):
        return 0.0


def constant_factory(train_set, seed):
    return ConstantClassifier()


class TestFolds:

    def test_sizes_and_coverage(self):
        cfg = CVConfig(n_folds=3, master_seed=1)
        folds = fold_assignments(np.arange(11) % 2, cfg, permutation=0)
        assert sorted(len(f) for f in folds) == [3, 4, 4]
        assert sorted(np.concatenate(folds).tolist()) == list(range(11))

    def test_seeded_by_permutation(self):
        cfg = CVConfig(master_seed=1)
        labels = np.arange(20) % 2
        a = fold_assignments(labels, cfg, 0)
        b = fold_assignments(labels, cfg, 0)
        c = fold_assignments(labels, cfg, 1)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert not all(np.array_equal(x, y) for x, y in zip(a, c))

    def test_stratified_balances_classes(self):
        labels = np.array([0] * 7 + [1] * 5)
        cfg = CVConfig(n_folds=2, stratified=True)
        for p in range(5):
            counts = [np.bincount(labels[f], minlength=2) for f in fold_assignments(labels, cfg, p)]
            assert abs(counts[0][0] - counts[1][0]) <= 1
            assert abs(counts[0][1] - counts[1][1]) <= 1

    def test_too_small(self):
        with pytest.raises(InvalidInputError):
            fold_assignments(np.array([0, 1, 0]), CVConfig(n_folds=2), 0)

    def test_config_validation(self):
        with pytest.raises(InvalidInputError):
            CVConfig(n_folds=1)
        with pytest.raises(InvalidInputError):
            CVConfig(n_permutations=0)


class TestPermutedCV:

    def test_constant_classifier_on_balanced_data(self, small_data):
        report = permuted_cv(small_data, constant_factory, CVConfig(n_permutations=5))
        assert set(report.permutation_accuracies().values()) == {0.5}
        assert report.aggregate() == (0.5, 0.0)
        assert len(report.records) == 10

    def test_records_are_complete(self, small_data):
        report = permuted_cv(small_data, dnn_factory(1, 6, FAST), CVConfig(n_permutations=2, master_seed=4))
        assert [(r.permutation, r.fold) for r in report.records] == [(0, 0), (0, 1), (1, 0), (1, 1)]
        for r in report.records:
            assert r.seed == derive_seed(4, r.permutation, r.fold)
            assert r.n_train + r.n_test == len(small_data)
            assert 0.0 <= r.accuracy <= 1.0 and np.isfinite(r.loss)
            assert r.model_ref is not None and r.error is None

    def test_worker_count_does_not_change_results(self, small_data):
        factory = dnn_factory(2, 8, FAST)
        one = permuted_cv(small_data, factory, CVConfig(n_permutations=3, jobs=1))
        four = permuted_cv(small_data, factory, CVConfig(n_permutations=3, jobs=4))
        assert json.dumps(one.to_dict(), sort_keys=True) == json.dumps(four.to_dict(), sort_keys=True)

    def test_cells_dispatched_through_joblib(self, small_data, monkeypatch):
        from src.experiments import harness

        seen = []
        real = harness.Parallel

        def spy(*args, **kwargs):
            seen.append(kwargs)
            return real(*args, **kwargs)

        monkeypatch.setattr(harness, "Parallel", spy)
        report = permuted_cv(small_data, constant_factory, CVConfig(n_permutations=3, jobs=3, progress=False))
        assert seen == [{"n_jobs": 3, "prefer": "threads", "return_as": "generator"}]
        assert [(r.permutation, r.fold) for r in report.records] == [(p, f) for p in range(3) for f in range(2)]

    def test_failed_cell_marks_permutation(self, small_data):
        bad_seed = derive_seed(0, 1, 0)

        def factory(train_set, seed):
            if seed == bad_seed:
                raise RuntimeError("boom")
            return ConstantClassifier()

        report = permuted_cv(small_data, factory, CVConfig(n_permutations=3))
        assert report.failed_permutations == [1]
        assert sorted(report.permutation_accuracies()) == [0, 2]
        failed = [r for r in report.records if r.failed]
        assert len(failed) == 1 and failed[0].error == "RuntimeError: boom"
        assert report.to_dict()["failed_permutations"] == [1]

    def test_all_failed(self, small_data):
        def factory(train_set, seed):
            raise RuntimeError("nope")

        report = permuted_cv(small_data, factory, CVConfig(n_permutations=2))
        mean, std = report.aggregate()
        assert np.isnan(mean) and np.isnan(std)
        report.to_dict()

    def test_verify_detects_tampering(self, small_data):
        report = permuted_cv(small_data, constant_factory, CVConfig(n_permutations=3))
        mean, std = report.aggregate()
        report.verify(mean, std)
        with pytest.raises(ReportIntegrityError):
            report.verify(mean + 1e-6, std)
        report.records[0].n_correct += 1
        with pytest.raises(ReportIntegrityError):
            report.verify(mean, std)

    def test_report_dict(self, small_data):
        doc = permuted_cv(small_data, constant_factory, CVConfig(n_permutations=2, jobs=2), cell={"model": "const"}).to_dict()
        assert "jobs" not in doc["config"] and "progress" not in doc["config"]
        assert doc["cell"] == {"model": "const"}
        assert doc["permutation_accuracies"] == {"0": 0.5, "1": 0.5}

    def test_linear_svm(self, small_data):
        report = permuted_cv(small_data, linear_svm_factory(SVMConfig(epochs=5)), CVConfig(n_permutations=2))
        assert not report.failed_permutations
        assert 0.0 <= report.mean_accuracy <= 1.0
        assert report.records[0].model_ref.startswith("LinearModel(")


class TestStructureSweep:

    def test_cells(self, small_data):
        grid = StructureGrid((1, 2), (4, 6))
        reports = structure_sweep([small_data], grid, FAST, CVConfig(n_permutations=1))
        assert [(r.cell["layers"], r.cell["neurons"]) for r in reports] == [(1, 4), (1, 6), (2, 4), (2, 6)]
        frame = summary_frame(reports)
        assert list(frame.columns) == ["layers", "neurons", "scale", "mean_acc", "std_acc"]
        assert (frame["scale"] == small_data.n_nodes).all()

    def test_default_grid(self):
        grid = StructureGrid()
        assert len(grid.cells()) == 12
        assert StructureGrid.from_dict(grid.to_dict()) == grid

    def test_summary_for_linear_model(self, small_data):
        report = permuted_cv(small_data, constant_factory, CVConfig(n_permutations=2), cell={"model": "linear-svm", "scale": 8})
        row = summary_frame([report]).iloc[0]
        assert (row["layers"], row["neurons"], row["scale"]) == (0, 0, 8)


class TestRepeatability:

    def test_identical_models_correlate_perfectly(self, small_data):
        net = init_network(NetworkSpec.from_structure(small_data.input_dim, 2, 8), seed=0)
        result = repeatability_study(
            small_data, 2, 8, FAST, CVConfig(n_permutations=50), model_factory=lambda train_set, seed: net
        )
        assert result.summary.n_patterns == 100
        assert result.summary.n_pairs == 4950
        assert result.summary.min == pytest.approx(1.0)

    def test_trained_models(self, small_data):
        result = repeatability_study(small_data, 1, 6, FAST, CVConfig(n_permutations=2))
        assert len(result.patterns) == 4
        assert len(result.correlations) == 6
        assert all(p.layer == 1 and p.diff is not None for p in result.patterns)

    def test_select_feature(self, small_data):
        net = train(init_network(NetworkSpec(small_data.input_dim, (6,), 2, (0.0,)), 0), small_data, FAST).network
        diffs = net.weights[-1][0] - net.weights[-1][1]
        assert select_feature(net, "top") == int(np.argmax(np.abs(diffs)))
        with pytest.raises(InvalidInputError):
            select_feature(net, "best")
