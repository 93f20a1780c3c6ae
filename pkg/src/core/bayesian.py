"""
Monte Carlo Dropout Testing

Dropout kept on at test time turns a dropout-trained network into a
sampler over sub-networks: T stochastic passes give a predictive mean
and a per-class variance (the model uncertainty of one prediction).

Provides:
  - DropoutPolicy               rate(p) or retain-exactly-m on one hidden layer
  - mc_dropout_predict / _batch T-pass predictive mean and variance
  - dropout_rate_sweep          MC accuracy per policy vs weight averaging
  - build_subset_suite          pure and mixed test subsets (F, F1, FM, M1, M)
  - uncertainty_sweep           accuracy and mean uncertainty per subset
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from .connectivity import ConnectivityMatrix, Dataset, devectorize, mix, preprocess, vectorize
from .errors import InvalidInputError
from .network import Network, forward, predict_batch, sigmoid, softmax
from .rng import derive_seed, make_rng

logger = logging.getLogger(__name__)

DEFAULT_T = 100
SUBSET_WEIGHTS = (1.0, 0.75, 0.5, 0.25, 0.0)
CHUNK = 256


@dataclass(frozen=True)
class DropoutPolicy:
    """
    Test-time dropout on one hidden layer.

    Attributes:
        variant: "rate" (drop each neuron with probability value) or
            "retain_exact" (keep a uniform random subset of value neurons)
        value: Rate p in [0, 1) or retained count m >= 1
        target_layer: 1-based hidden layer; None means the last one
    """
    variant: str = "rate"
    value: float = 0.5
    target_layer: Optional[int] = None

    def __post_init__(self):
        if self.variant == "rate":
            if not 0.0 <= self.value < 1.0:
                raise InvalidInputError(f"dropout rate must lie in [0, 1), got {self.value}")
        elif self.variant == "retain_exact":
            if self.value < 1 or int(self.value) != self.value:
                raise InvalidInputError(f"retain_exact needs a positive integer, got {self.value}")
        else:
            raise InvalidInputError(f"unknown dropout policy variant {self.variant!r}")

    @classmethod
    def rate(cls, p: float, target_layer: Optional[int] = None) -> "DropoutPolicy":
        return cls("rate", float(p), target_layer)

    @classmethod
    def retain_exact(cls, m: int, target_layer: Optional[int] = None) -> "DropoutPolicy":
        return cls("retain_exact", int(m), target_layer)

    @classmethod
    def parse(cls, text: str) -> "DropoutPolicy":
        """Parse ``rate:P``, ``retain:M`` or ``RM`` (e.g. ``R2``)."""
        text = text.strip()
        try:
            if text[:1] in ("R", "r") and text[1:].isdigit():
                return cls.retain_exact(int(text[1:]))
            kind, _, value = text.partition(":")
            if kind == "rate":
                return cls.rate(float(value))
            if kind in ("retain", "retain_exact"):
                return cls.retain_exact(int(value))
        except ValueError as e:
            raise InvalidInputError(f"bad dropout policy {text!r}") from e
        raise InvalidInputError(f"bad dropout policy {text!r} (use rate:P, retain:M or RM)")

    @property
    def label(self) -> str:
        return f"rate:{self.value:g}" if self.variant == "rate" else f"R{int(self.value)}"


@dataclass
class BayesianPrediction:
    """Predictive mean and variance over T sampled passes."""
    mean_probs: np.ndarray
    variance: np.ndarray
    uncertainty: float
    label: int
    T: int


@dataclass
class SubsetSuite:
    """
    Pure and mixed test subsets.

    ``weights[name]`` is the mixing weight toward the anchor class; the
    evaluation label is the anchor class when the weight is >= 0.5.
    """
    names: List[str]
    inputs: Dict[str, np.ndarray]
    labels: Dict[str, np.ndarray]
    weights: Dict[str, float]
    mix_stage: str = "normalized"


@dataclass
class SweepResult:
    """Summary table plus one record per (row key, input)."""
    table: pd.DataFrame
    records: List[Dict] = field(default_factory=list)


def _target_layer(net: Network, policy: DropoutPolicy) -> int:
    layer = policy.target_layer or net.n_hidden
    if not 1 <= layer <= net.n_hidden:
        raise InvalidInputError(f"target layer must lie in 1..{net.n_hidden}, got {layer}")
    size = net.spec.hidden_sizes[layer - 1]
    if policy.variant == "retain_exact" and policy.value > size:
        raise InvalidInputError(f"retain_exact({int(policy.value)}) exceeds layer size {size}")
    return layer


def _is_stochastic(policy: DropoutPolicy, size: int) -> bool:
    if policy.variant == "rate":
        return policy.value > 0.0
    return policy.value < size


def _sample_masks(rng: np.random.Generator, T: int, size: int, policy: DropoutPolicy) -> np.ndarray:
    if policy.variant == "rate":
        return (rng.random((T, size)) >= policy.value).astype(np.float64)
    kept = np.argsort(rng.random((T, size)), axis=1)[:, : int(policy.value)]
    masks = np.zeros((T, size))
    np.put_along_axis(masks, kept, 1.0, axis=1)
    return masks


def _mc_chunk(net: Network, X: np.ndarray, T: int, policy: DropoutPolicy, layer: int, seeds: Sequence[int]) -> np.ndarray:
    """Sampled probabilities, shape (n, T, n_classes)."""
    rates = net.spec.dropout_rates
    h = X
    for i in range(layer - 1):
        h = sigmoid(h @ net.weights[i].T + net.biases[i]) * (1.0 - rates[i])
    a = sigmoid(h @ net.weights[layer - 1].T + net.biases[layer - 1])
    n, size = a.shape
    masks = np.stack([_sample_masks(make_rng(s), T, size, policy) for s in seeds])
    h = (a[:, None, :] * masks).reshape(n * T, size)
    for i in range(layer, net.n_hidden):
        h = sigmoid(h @ net.weights[i].T + net.biases[i]) * (1.0 - rates[i])
    probs = softmax(h @ net.weights[-1].T + net.biases[-1])
    return probs.reshape(n, T, -1)


def mc_dropout_batch(
    net: Network,
    X: np.ndarray,
    T: int,
    policy: DropoutPolicy,
    seeds: Sequence[int],
) -> List[BayesianPrediction]:
    """
    MC dropout prediction for every row of X; row i uses ``seeds[i]``.

    Layers other than the target keep weight averaging. A policy that
    removes nothing (rate 0, or retaining the whole layer) returns the
    deterministic forward of the network with the target rate set to 0,
    with variance exactly 0.
    """
    if T < 1:
        raise InvalidInputError(f"T must be >= 1, got {T}")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != net.spec.input_dim:
        raise InvalidInputError(f"input has length {X.shape[1]}, network expects {net.spec.input_dim}")
    if len(seeds) != X.shape[0]:
        raise InvalidInputError("need one seed per input row")
    layer = _target_layer(net, policy)
    size = net.spec.hidden_sizes[layer - 1]

    if not _is_stochastic(policy, size):
        rates = list(net.spec.dropout_rates)
        rates[layer - 1] = 0.0
        probs = forward(net.with_dropout_rates(rates), X).probs
        zeros = np.zeros(probs.shape[1])
        return [BayesianPrediction(p, zeros.copy(), 0.0, int(np.argmax(p)), T) for p in probs]

    out: List[BayesianPrediction] = []
    for start in range(0, X.shape[0], CHUNK):
        samples = _mc_chunk(net, X[start:start + CHUNK], T, policy, layer, seeds[start:start + CHUNK])
        for s in samples:
            if np.all(s == s[0]):
                mean, var = s[0].copy(), np.zeros(s.shape[1])
            else:
                mean = s.mean(axis=0)
                var = s.var(axis=0, ddof=1 if T > 1 else 0)
            out.append(BayesianPrediction(mean, var, float(var[0]), int(np.argmax(mean)), T))
    return out


def mc_dropout_predict(net: Network, x: np.ndarray, T: int, policy: DropoutPolicy, seed: int) -> BayesianPrediction:
    """T stochastic passes for a single input; deterministic per seed."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInputError("mc_dropout_predict takes a single input vector; use mc_dropout_batch")
    return mc_dropout_batch(net, x[None, :], T, policy, [seed])[0]


def _prob_columns(p: BayesianPrediction) -> Dict[str, float]:
    return {f"prob_{c}": float(v) for c, v in enumerate(p.mean_probs)}


def dropout_rate_sweep(
    net: Network,
    X: np.ndarray,
    y: np.ndarray,
    policies: Sequence[DropoutPolicy],
    T: int = DEFAULT_T,
    seed: int = 0,
    progress: bool = False,
) -> SweepResult:
    """
    MC-dropout accuracy per policy next to the weight-averaging accuracy.

    Input i uses the seed derived from (seed, i) under every policy, so the
    policies are compared on paired random streams.
    """
    y = np.asarray(y)
    seeds = [derive_seed(seed, i) for i in range(len(y))]
    wa_accuracy = float(np.mean(predict_batch(net, X)[1] == y))
    rows, records = [], []
    for policy in tqdm(policies, desc="dropout sweep", disable=not progress):
        preds = mc_dropout_batch(net, X, T, policy, seeds)
        labels = np.array([p.label for p in preds])
        rows.append({
            "policy": policy.label,
            "mc_accuracy": float(np.mean(labels == y)),
            "wa_accuracy": wa_accuracy,
        })
        records.extend(
            {"policy": policy.label, "index": i, "label": int(y[i]), "predicted": p.label,
             **_prob_columns(p)}
            for i, p in enumerate(preds)
        )
        logger.info("policy %s: MC accuracy %.4f (weight averaging %.4f)", policy.label, rows[-1]["mc_accuracy"], wa_accuracy)
    return SweepResult(pd.DataFrame(rows, columns=["policy", "mc_accuracy", "wa_accuracy"]), records)


def subset_names(class_names: Sequence[str], anchor_class: int = 1) -> List[str]:
    """F, F1, FM, M1, M for anchor "F" and other class "M"."""
    a, b = class_names[anchor_class], class_names[1 - anchor_class]
    return [a, f"{a}1", f"{a}{b}", f"{b}1", b]


def _preprocess_vector(v: np.ndarray, n_nodes: int) -> np.ndarray:
    return vectorize(preprocess(ConnectivityMatrix(devectorize(v, n_nodes, diagonal=1.0))))


def build_subset_suite(
    test: Dataset,
    n_per_subset: int,
    seed: int,
    mix_stage: str = "normalized",
    anchor_class: int = 1,
) -> SubsetSuite:
    """
    Draw n_per_subset subjects per class and build five subsets.

    Mixed subsets pair every anchor subject with a distinct other-class
    subject (fresh random pairing per subset) at weights 0.75, 0.5, 0.25
    toward the anchor. ``mix_stage`` "normalized" mixes model inputs;
    "raw" mixes correlation matrices and preprocesses the result.
    """
    if mix_stage not in ("normalized", "raw"):
        raise InvalidInputError(f"mix_stage must be 'normalized' or 'raw', got {mix_stage!r}")
    labels = test.labels
    anchor_pool = np.flatnonzero(labels == anchor_class)
    other_pool = np.flatnonzero(labels != anchor_class)
    if n_per_subset < 1 or min(anchor_pool.size, other_pool.size) < n_per_subset:
        raise InvalidInputError(
            f"need {n_per_subset} subjects per class, have {anchor_pool.size} / {other_pool.size}"
        )
    rng = make_rng(seed)
    a_idx = rng.choice(anchor_pool, size=n_per_subset, replace=False)
    b_idx = rng.choice(other_pool, size=n_per_subset, replace=False)

    features = test.features
    source = features if mix_stage == "normalized" else test.raw_vectors()
    names = subset_names(test.class_names, anchor_class)
    suite = SubsetSuite(names, {}, {}, {}, mix_stage)
    for name, alpha in zip(names, SUBSET_WEIGHTS):
        if alpha == 1.0:
            inputs = features[a_idx].copy()
        elif alpha == 0.0:
            inputs = features[b_idx].copy()
        else:
            partner = b_idx[rng.permutation(n_per_subset)]
            mixed = [mix(source[i], source[j], alpha) for i, j in zip(a_idx, partner)]
            if mix_stage == "raw":
                mixed = [_preprocess_vector(v, test.n_nodes) for v in mixed]
            inputs = np.stack(mixed)
        label = anchor_class if alpha >= 0.5 else 1 - anchor_class
        suite.inputs[name] = inputs
        suite.labels[name] = np.full(n_per_subset, label, dtype=np.int64)
        suite.weights[name] = alpha
    return suite


def uncertainty_sweep(
    net: Network,
    suite: SubsetSuite,
    T: int = DEFAULT_T,
    policy: Optional[DropoutPolicy] = None,
    seed: int = 0,
    progress: bool = False,
) -> SweepResult:
    """Accuracy against the suite labels and mean model uncertainty per subset."""
    policy = policy or DropoutPolicy.rate(0.5)
    rows, records = [], []
    for s, name in enumerate(tqdm(suite.names, desc="uncertainty sweep", disable=not progress)):
        X, y = suite.inputs[name], suite.labels[name]
        preds = mc_dropout_batch(net, X, T, policy, [derive_seed(seed, s, i) for i in range(len(y))])
        labels = np.array([p.label for p in preds])
        unc = np.array([p.uncertainty for p in preds])
        rows.append({"subset": name, "accuracy": float(np.mean(labels == y)), "mean_uncertainty": float(unc.mean())})
        records.extend(
            {"subset": name, "index": i, "label": int(y[i]), "predicted": p.label,
             **_prob_columns(p), "uncertainty": p.uncertainty}
            for i, p in enumerate(preds)
        )
    return SweepResult(pd.DataFrame(rows, columns=["subset", "accuracy", "mean_uncertainty"]), records)
