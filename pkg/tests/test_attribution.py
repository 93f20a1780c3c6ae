"""Feature ranking, back-projection, truncated evaluation and pattern correlation."""

import json

import numpy as np
import pytest
from scipy import stats

from src.core.attribution import (
    BackProjectionPolicy,
    InputPattern,
    back_project,
    export_pattern,
    feature_correlation,
    pair_loss,
    pair_loss_curve,
    rank_features,
    score_difference_terms,
    summarize_correlations,
    truncated_predict,
    truncation_curve,
)
from src.core.errors import AttributionError, InvalidInputError, UnsupportedError
from src.core.network import NetworkSpec, init_network, predict

from conftest import random_batch


def _net_with_readout(diffs, input_dim=10):
    """One hidden layer whose readout rows differ by ``diffs``."""
    diffs = np.asarray(diffs, dtype=np.float64)
    net = init_network(NetworkSpec(input_dim, (diffs.size,), 2, (0.0,)), seed=0)
    net.weights[-1][0] = diffs
    net.weights[-1][1] = 0.0
    return net


class TestRanking:

    def test_partition_and_order(self):
        ranking = rank_features(_net_with_readout([0.5, -2.0, 1.5, 0.0, -0.1, 1.5]))
        assert [f.neuron_index for f in ranking.class0] == [2, 5, 0, 3]
        assert [f.neuron_index for f in ranking.class1] == [1, 4]
        assert [f.rank_within_class for f in ranking.class0] == [1, 2, 3, 4]
        all_neurons = sorted(f.neuron_index for f in ranking.class0 + ranking.class1)
        assert all_neurons == list(range(6))
        assert ranking.top().neuron_index == 1

    def test_keep_set(self):
        ranking = rank_features(_net_with_readout([0.5, -2.0, 1.5, 0.0, -0.1, 1.5]))
        assert ranking.keep_set(1) == {2, 1}
        assert ranking.keep_set(3) == {2, 5, 0, 1, 4}
        assert ranking.keep_set("all") == set(range(6))
        with pytest.raises(InvalidInputError):
            ranking.keep_set(0)

    def test_frame(self):
        frame = rank_features(_net_with_readout([1.0, -1.0])).to_frame()
        assert list(frame.columns) == ["neuron", "class", "rank", "diff", "magnitude"]
        assert len(frame) == 2

    def test_needs_two_classes(self):
        net = init_network(NetworkSpec(4, (3,), 3), 0)
        with pytest.raises(UnsupportedError):
            rank_features(net)


class TestScoreDecomposition:

    def test_identity(self):
        net = init_network(NetworkSpec(10, (12, 6)), seed=2)
        for x in np.random.default_rng(0).normal(size=(100, 10)):
            total, terms, bias = score_difference_terms(net, x)
            assert total == pytest.approx(terms.sum() + bias, abs=1e-10)


class TestBackProject:

    @pytest.mark.parametrize("hidden", [(7,), (7, 5), (7, 5, 4)])
    def test_matches_weight_chain(self, hidden):
        net = init_network(NetworkSpec(10, hidden), seed=4)
        for layer in range(1, len(hidden) + 1):
            for k in range(hidden[layer - 1]):
                chain = [np.eye(hidden[layer - 1])[k]] + [net.weights[i] for i in range(layer - 1, -1, -1)]
                expected = chain[0] @ chain[1] if len(chain) == 2 else np.linalg.multi_dot(chain)
                pattern = back_project(net, layer, k)
                np.testing.assert_allclose(pattern.vector, expected, rtol=0, atol=1e-10)
                assert pattern.layer == layer and pattern.neuron == k

    def test_first_layer_is_weight_row(self, tiny_net):
        np.testing.assert_array_equal(back_project(tiny_net, 1, 3).vector, tiny_net.weights[0][3])

    def test_diff_on_last_layer_only(self, tiny_net):
        last = back_project(tiny_net, 2, 1)
        assert last.diff == tiny_net.weights[-1][0, 1] - tiny_net.weights[-1][1, 1]
        assert back_project(tiny_net, 1, 1).diff is None

    def test_top_k_policy(self, tiny_net):
        policy = BackProjectionPolicy("top_k", 2)
        w = tiny_net.weights[1][0]
        keep = np.argsort(-np.abs(w), kind="stable")[:2]
        expected = sum(w[j] * tiny_net.weights[0][j] for j in keep)
        np.testing.assert_allclose(back_project(tiny_net, 2, 0, policy).vector, expected, atol=1e-12)

    def test_threshold_eliminating_all_weights(self, tiny_net):
        with pytest.raises(AttributionError, match="eliminates all weights"):
            back_project(tiny_net, 2, 0, BackProjectionPolicy("threshold", 1e6))

    def test_bad_indices(self, tiny_net):
        with pytest.raises(InvalidInputError):
            back_project(tiny_net, 3, 0)
        with pytest.raises(InvalidInputError):
            back_project(tiny_net, 1, 5)

    def test_policy_parse(self):
        assert BackProjectionPolicy.parse("all").kind == "all"
        assert BackProjectionPolicy.parse("threshold:0.1").value == 0.1
        assert str(BackProjectionPolicy.parse("top_k:3")) == "top_k:3"
        with pytest.raises(InvalidInputError):
            BackProjectionPolicy.parse("top_k:1.5")
        with pytest.raises(InvalidInputError):
            BackProjectionPolicy.parse("biggest:2")


class TestTruncation:

    def test_all_is_predict(self, tiny_net):
        for x in np.random.default_rng(1).normal(size=(10, 6)):
            a, b = truncated_predict(tiny_net, x, "all"), predict(tiny_net, x)
            np.testing.assert_array_equal(a.probs, b.probs)
            assert a.label == b.label

    def test_k_covering_every_neuron_matches_predict(self, tiny_net):
        x = np.linspace(-1, 1, 6)
        np.testing.assert_allclose(truncated_predict(tiny_net, x, 10).probs, predict(tiny_net, x).probs, atol=1e-15)

    def test_truncation_curve(self, tiny_net):
        X, y = random_batch(np.random.default_rng(2), 20, 6)
        curve = truncation_curve(tiny_net, X, y, [1, 2, "all"])
        assert list(curve["k_pairs"]) == ["1", "2", "all"]
        assert curve["accuracy"].between(0, 1).all()


class TestPairLoss:

    def test_uniform_readout_is_ln2(self):
        # twin hidden neurons, one voting per class: equal scores
        net = _net_with_readout([1.0, -1.0])
        net.weights[0][1] = net.weights[0][0]
        net.weights[-1][:] = [[1.0, 0.0], [0.0, 1.0]]
        X, y = random_batch(np.random.default_rng(0), 10, 10)
        assert pair_loss(net, X, y, 1) == pytest.approx(np.log(2.0), abs=1e-12)

    def test_empty_class_list_is_an_error(self):
        net = _net_with_readout([1.0, 2.0])
        X, y = random_batch(np.random.default_rng(0), 4, 10)
        assert rank_features(net).class1 == []
        with pytest.raises(AttributionError):
            pair_loss(net, X, y, 1)
        assert pair_loss_curve(net, X, y, [1, 2]).empty

    def test_rank_beyond_class_list(self):
        net = _net_with_readout([1.0, 2.0, -1.0])
        X, y = random_batch(np.random.default_rng(0), 4, 10)
        pair_loss(net, X, y, 1)
        with pytest.raises(AttributionError):
            pair_loss(net, X, y, 2)

    def test_curve_skips_missing_ranks(self):
        net = _net_with_readout([1.0, 2.0, -1.0, -3.0, 0.5])
        X, y = random_batch(np.random.default_rng(0), 4, 10)
        curve = pair_loss_curve(net, X, y, [1, 2, 3])
        assert list(curve["rank"]) == [1, 2]

    def test_matches_manual_readout(self):
        net = _net_with_readout([1.0, 2.0, -1.0, -3.0])
        X, y = random_batch(np.random.default_rng(5), 6, 10)
        # rank 1 keeps neuron 1 (class 0) and neuron 3 (class 1)
        hidden = 1.0 / (1.0 + np.exp(-(X @ net.weights[0].T)))
        keep = np.array([0.0, 1.0, 0.0, 1.0])
        scores = (hidden * keep) @ net.weights[-1].T
        probs = np.exp(scores) / np.exp(scores).sum(axis=1, keepdims=True)
        expected = -np.mean(np.log(probs[np.arange(6), y]))
        assert pair_loss(net, X, y, 1) == pytest.approx(expected, rel=1e-10)


class TestCorrelation:

    def test_identical_patterns(self):
        v = np.random.default_rng(0).normal(size=10)
        pairs = feature_correlation([InputPattern(v, 1, 0), InputPattern(v.copy(), 1, 1)])
        assert pairs[0].r == pytest.approx(1.0)

    def test_alignment_flips_class1_patterns(self):
        v = np.random.default_rng(0).normal(size=10)
        patterns = [InputPattern(v, 2, 0, diff=0.5), InputPattern(-v, 2, 1, diff=-0.5)]
        assert feature_correlation(patterns, align=True)[0].r == pytest.approx(1.0)
        assert feature_correlation(patterns, align=False)[0].r == pytest.approx(-1.0)

    def test_matches_pearson(self):
        rng = np.random.default_rng(3)
        vectors = rng.normal(size=(4, 15))
        pairs = feature_correlation([InputPattern(v, 1, i) for i, v in enumerate(vectors)])
        assert [(p.i, p.j) for p in pairs] == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
        for p in pairs:
            assert p.r == pytest.approx(stats.pearsonr(vectors[p.i], vectors[p.j])[0], abs=1e-12)

    def test_zero_variance_is_undefined(self):
        rng = np.random.default_rng(0)
        patterns = [InputPattern(np.full(10, 2.0), 1, 0), InputPattern(rng.normal(size=10), 1, 1)]
        pairs = feature_correlation(patterns)
        assert np.isnan(pairs[0].r)
        summary = summarize_correlations(pairs, 2)
        assert summary.n_undefined == 1 and np.isnan(summary.median)

    def test_constant_nonzero_pattern_is_undefined(self):
        # 0.1 is not exact in binary; its centered values are not all zero
        patterns = [InputPattern(np.full(3, 0.1), 1, 0), InputPattern(np.array([0.3, -0.2, 0.5]), 1, 1)]
        assert np.isnan(feature_correlation(patterns)[0].r)
        assert np.isnan(feature_correlation(patterns, align=False)[0].r)

    def test_summary_counts(self):
        rng = np.random.default_rng(1)
        patterns = [InputPattern(rng.normal(size=10), 1, i) for i in range(100)]
        pairs = feature_correlation(patterns)
        summary = summarize_correlations(pairs, len(patterns))
        assert summary.n_pairs == 4950
        values = np.array([p.r for p in pairs])
        assert summary.median == pytest.approx(np.median(values))
        assert summary.min <= summary.q1 <= summary.median <= summary.q3 <= summary.max

    def test_needs_two_patterns(self):
        with pytest.raises(InvalidInputError):
            feature_correlation([InputPattern(np.ones(10), 1, 0)])


class TestExport:

    def test_writes_matrix_and_sidecar(self, tmp_path):
        net = init_network(NetworkSpec(10, (4,)), 0)
        pattern = back_project(net, 1, 2)
        csv_path, json_path = export_pattern(pattern, str(tmp_path / "patterns" / "M_rank1"), {"class": "M"})
        matrix = np.loadtxt(csv_path, delimiter=",")
        assert matrix.shape == (5, 5)
        np.testing.assert_array_equal(matrix, matrix.T)
        with open(json_path) as f:
            sidecar = json.load(f)
        assert sidecar == {"class": "M", "diff": pattern.diff, "layer": 1, "neuron": 2, "policy": "all"}
