"""
Feature Ranking and Back-Projection

The readout of a two-class network satisfies

    S(0) - S(1) = sum_j (w_0j - w_1j) * A_j + (b_0 - b_1)

where A_j is what last-hidden neuron j feeds the readout. The weight
difference ``diff_j`` therefore says which class neuron j votes for and
how strongly. This module ranks last-hidden neurons by |diff|, expands a
hidden neuron into an input-space connectivity pattern through the chain
of weight rows, and evaluates the network with only a few top neurons.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
import pandas as pd

from .connectivity import devectorize, n_nodes_for
from .errors import AttributionError, InvalidInputError, UnsupportedError
from .network import Network, cross_entropy, deterministic_multipliers, forward, predict, propagate, Prediction

logger = logging.getLogger(__name__)

ALL = "all"
KPairs = Union[int, str]


@dataclass(frozen=True)
class RankedFeature:
    """A last-hidden-layer neuron scored by its readout weight difference."""
    neuron_index: int
    diff: float
    magnitude: float
    assigned_class: int
    rank_within_class: int


@dataclass
class FeatureRanking:
    """Per-class ranked lists; together they cover every last-hidden neuron once."""
    class0: List[RankedFeature]
    class1: List[RankedFeature]

    def by_class(self, cls: int) -> List[RankedFeature]:
        return self.class0 if cls == 0 else self.class1

    def top(self) -> RankedFeature:
        """Feature with the largest |diff| overall (class 0 wins ties)."""
        candidates = [lst[0] for lst in (self.class0, self.class1) if lst]
        return max(candidates, key=lambda f: (f.magnitude, -f.assigned_class))

    def keep_set(self, k_pairs: KPairs) -> Set[int]:
        """Neurons in the top-k of each class (all neurons for ``"all"``)."""
        if k_pairs == ALL:
            return {f.neuron_index for f in self.class0 + self.class1}
        k = int(k_pairs)
        if k < 1:
            raise InvalidInputError(f"k_pairs must be >= 1 or 'all', got {k_pairs}")
        for name, lst in (("class 0", self.class0), ("class 1", self.class1)):
            if len(lst) < k:
                logger.info("requested %d %s features, only %d available; using all of them", k, name, len(lst))
        return {f.neuron_index for f in self.class0[:k] + self.class1[:k]}

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "neuron": f.neuron_index,
                "class": f.assigned_class,
                "rank": f.rank_within_class,
                "diff": f.diff,
                "magnitude": f.magnitude,
            }
            for f in self.class0 + self.class1
        ]
        return pd.DataFrame(rows, columns=["neuron", "class", "rank", "diff", "magnitude"])


@dataclass(frozen=True)
class BackProjectionPolicy:
    """
    Which lower-level weights enter the expansion.

    kind: "all", "threshold" (|w| >= value) or "top_k" (value largest |w|
    per row, ties to the lower index).
    """
    kind: str = ALL
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in (ALL, "threshold", "top_k"):
            raise InvalidInputError(f"unknown back-projection policy {self.kind!r}")
        if self.kind == "top_k" and (self.value < 1 or int(self.value) != self.value):
            raise InvalidInputError(f"top_k needs a positive integer, got {self.value}")

    @classmethod
    def parse(cls, text: str) -> "BackProjectionPolicy":
        """Parse ``all``, ``threshold:T`` or ``top_k:K``."""
        kind, _, value = text.partition(":")
        if kind == ALL:
            return cls()
        try:
            return cls(kind, float(value))
        except ValueError as e:
            raise InvalidInputError(f"bad back-projection policy {text!r}") from e

    def __str__(self):
        return ALL if self.kind == ALL else f"{self.kind}:{self.value:g}"

    def row_mask(self, w: np.ndarray) -> np.ndarray:
        """Boolean mask of the kept entries of each row of ``w``."""
        mag = np.abs(w)
        if self.kind == ALL:
            return np.ones(w.shape, dtype=bool)
        if self.kind == "threshold":
            return mag >= self.value
        k = min(int(self.value), w.shape[1])
        order = np.argsort(-mag, axis=1, kind="stable")[:, :k]
        mask = np.zeros(w.shape, dtype=bool)
        np.put_along_axis(mask, order, True, axis=1)
        return mask


@dataclass
class InputPattern:
    """
    A hidden neuron expressed in input (connectivity) space.

    Attributes:
        vector: Pattern in vectorized upper-triangle order
        layer: Hidden layer of the source neuron (1-based)
        neuron: Neuron index within that layer
        policy: Back-projection policy used
        diff: Readout weight difference of the neuron (last layer only)
    """
    vector: np.ndarray
    layer: int
    neuron: int
    policy: BackProjectionPolicy = field(default_factory=BackProjectionPolicy)
    diff: Optional[float] = None

    @property
    def matrix_view(self) -> np.ndarray:
        return devectorize(self.vector, n_nodes_for(self.vector.size))

    def oriented(self) -> np.ndarray:
        """Vector pointing in the class-0-minus-class-1 direction."""
        if self.diff is not None and self.diff < 0:
            return -self.vector
        return self.vector


@dataclass
class PairCorrelation:
    i: int
    j: int
    r: float  # nan when undefined


@dataclass
class CorrelationSummary:
    n_patterns: int
    n_pairs: int
    n_undefined: int
    min: float
    q1: float
    median: float
    q3: float
    max: float

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


def _require_two_classes(net: Network) -> None:
    if net.spec.n_classes != 2:
        raise UnsupportedError(f"feature ranking needs a two-class readout, network has {net.spec.n_classes}")


def rank_features(net: Network) -> FeatureRanking:
    """
    Rank last-hidden neurons by |w_0j - w_1j|.

    Positive diffs go to class 0, negative to class 1, zero diffs to class
    0 (ranked last). Within a class: magnitude descending, then index.
    """
    _require_two_classes(net)
    readout = net.weights[-1]
    diffs = readout[0] - readout[1]
    lists: Tuple[List[RankedFeature], List[RankedFeature]] = ([], [])
    order = sorted(range(diffs.size), key=lambda j: (-abs(diffs[j]), j))
    for j in order:
        cls = 0 if diffs[j] >= 0 else 1
        lst = lists[cls]
        lst.append(RankedFeature(j, float(diffs[j]), float(abs(diffs[j])), cls, len(lst) + 1))
    return FeatureRanking(*lists)


def score_difference_terms(net: Network, x: np.ndarray) -> Tuple[float, np.ndarray, float]:
    """
    Decompose S(0) - S(1) for input x.

    Returns:
        (score difference, per-neuron terms diff_j * A_j, bias difference)
    """
    _require_two_classes(net)
    acts = forward(net, x)
    readout_inputs = acts.outputs[-1]
    diffs = net.weights[-1][0] - net.weights[-1][1]
    return float(acts.scores[0] - acts.scores[1]), diffs * readout_inputs, float(net.biases[-1][0] - net.biases[-1][1])


def back_project(
    net: Network,
    layer: int,
    neuron: int,
    policy: Optional[BackProjectionPolicy] = None,
) -> InputPattern:
    """
    Expand hidden neuron ``neuron`` of ``layer`` into input space.

    F_k^1 is row k of the first weight matrix; F_k^{l+1} is the sum over
    j in J of w_kj F_j^l, J chosen per row by ``policy``.

    Raises:
        AttributionError: if the policy leaves a contributing row with no weights
    """
    policy = policy or BackProjectionPolicy()
    if not 1 <= layer <= net.n_hidden:
        raise InvalidInputError(f"layer must lie in 1..{net.n_hidden}, got {layer}")
    if not 0 <= neuron < net.spec.hidden_sizes[layer - 1]:
        raise InvalidInputError(f"neuron {neuron} out of range for layer {layer}")

    coef = np.zeros(net.spec.hidden_sizes[layer - 1])
    coef[neuron] = 1.0
    for level in range(layer - 1, 0, -1):
        w = net.weights[level]
        mask = policy.row_mask(w)
        active = np.flatnonzero(coef)
        empty = [int(k) for k in active if not mask[k].any()]
        if empty:
            raise AttributionError(f"threshold eliminates all weights (layer {level + 1}, neuron {empty[0]})")
        coef = coef @ np.where(mask, w, 0.0)

    vector = coef @ net.weights[0]
    diff = None
    if layer == net.n_hidden and net.spec.n_classes == 2:
        diff = float(net.weights[-1][0, neuron] - net.weights[-1][1, neuron])
    return InputPattern(vector, layer, neuron, policy, diff)


def truncated_probs(net: Network, X: np.ndarray, k_pairs: KPairs, ranking: Optional[FeatureRanking] = None) -> np.ndarray:
    """Class probabilities with only the top-k pairs of last-hidden neurons feeding the readout."""
    if k_pairs == ALL:
        return forward(net, X).probs
    ranking = ranking or rank_features(net)
    keep = np.zeros(net.spec.hidden_sizes[-1])
    keep[sorted(ranking.keep_set(k_pairs))] = 1.0
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return propagate(net, X, deterministic_multipliers(net), readout_keep=keep).probs


def truncated_predict(net: Network, x: np.ndarray, k_pairs: KPairs) -> Prediction:
    """
    Deterministic prediction using only the top-k class-0 and class-1 neurons.

    Readout biases are kept. ``"all"`` is exactly ``predict``.
    """
    if k_pairs == ALL:
        return predict(net, x)
    probs = truncated_probs(net, x, k_pairs)[0]
    return Prediction(probs, int(np.argmax(probs)))


def _pair_keep(ranking: FeatureRanking, rank: int) -> List[int]:
    if rank < 1:
        raise InvalidInputError(f"rank must be >= 1, got {rank}")
    keep = []
    for name, lst in (("class 0", ranking.class0), ("class 1", ranking.class1)):
        if rank > len(lst):
            raise AttributionError(f"rank {rank} exceeds the {len(lst)} {name} features")
        keep.append(lst[rank - 1].neuron_index)
    return keep


def pair_loss(net: Network, X: np.ndarray, y: np.ndarray, rank: int, ranking: Optional[FeatureRanking] = None) -> float:
    """
    Mean cross entropy (no penalties) when only the rank-th class-0 and
    rank-th class-1 neurons feed the readout.
    """
    ranking = ranking or rank_features(net)
    keep = np.zeros(net.spec.hidden_sizes[-1])
    keep[_pair_keep(ranking, rank)] = 1.0
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    probs = propagate(net, X, deterministic_multipliers(net), readout_keep=keep).probs
    return cross_entropy(probs, y)


def pair_loss_curve(net: Network, X: np.ndarray, y: np.ndarray, ranks: Sequence[int]) -> pd.DataFrame:
    """Pair loss for each rank that both class lists can supply."""
    ranking = rank_features(net)
    rows = []
    for rank in ranks:
        try:
            rows.append({"rank": rank, "loss": pair_loss(net, X, y, rank, ranking)})
        except AttributionError as e:
            logger.info("skipping rank %d: %s", rank, e)
    return pd.DataFrame(rows, columns=["rank", "loss"])


def truncation_curve(net: Network, X: np.ndarray, y: np.ndarray, ks: Sequence[KPairs]) -> pd.DataFrame:
    """Accuracy and mean cross entropy for each number of kept feature pairs."""
    ranking = rank_features(net)
    y = np.asarray(y)
    rows = []
    for k in ks:
        probs = truncated_probs(net, X, k, ranking)
        rows.append({
            "k_pairs": str(k),
            "accuracy": float(np.mean(np.argmax(probs, axis=1) == y)),
            "loss": cross_entropy(probs, y),
        })
    return pd.DataFrame(rows, columns=["k_pairs", "accuracy", "loss"])


def feature_correlation(patterns: Sequence[InputPattern], align: bool = True) -> List[PairCorrelation]:
    """
    Pearson correlation of every unordered pattern pair.

    With ``align`` each pattern is first turned to its class-0-minus-class-1
    orientation. Pairs involving a zero-variance pattern get r = nan.
    """
    if len(patterns) < 2:
        raise InvalidInputError("need at least two patterns")
    try:
        vectors = np.stack([p.oriented() if align else p.vector for p in patterns])
    except ValueError as e:
        raise InvalidInputError("patterns must have equal length") from e
    centered = vectors - vectors.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=1)
    # centering a constant vector leaves rounding residue
    defined = np.ptp(vectors, axis=1) > 0
    unit = np.divide(centered, norms[:, None], out=np.zeros_like(centered), where=defined[:, None])
    r = np.clip(unit @ unit.T, -1.0, 1.0)
    pairs = []
    for i in range(len(patterns)):
        for j in range(i + 1, len(patterns)):
            pairs.append(PairCorrelation(i, j, float(r[i, j]) if defined[i] and defined[j] else float("nan")))
    return pairs


def summarize_correlations(pairs: Sequence[PairCorrelation], n_patterns: int) -> CorrelationSummary:
    """Min, quartiles and max over the defined correlations."""
    values = np.array([p.r for p in pairs], dtype=np.float64)
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        stats = [float("nan")] * 5
    else:
        stats = [float(v) for v in np.percentile(finite, [0, 25, 50, 75, 100])]
    return CorrelationSummary(n_patterns, len(pairs), int(values.size - finite.size), *stats)


def export_pattern(pattern: InputPattern, stem: str, metadata: Optional[Dict] = None) -> Tuple[str, str]:
    """
    Write ``<stem>.csv`` (devectorized matrix) and ``<stem>.json`` (sidecar).

    Returns:
        (csv path, json path)
    """
    os.makedirs(os.path.dirname(os.path.abspath(stem)), exist_ok=True)
    csv_path, json_path = f"{stem}.csv", f"{stem}.json"
    np.savetxt(csv_path, pattern.matrix_view, fmt="%.17g", delimiter=",")
    sidecar = {
        "layer": pattern.layer,
        "neuron": pattern.neuron,
        "policy": str(pattern.policy),
        "diff": pattern.diff,
    }
    sidecar.update(metadata or {})
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")
    return csv_path, json_path
