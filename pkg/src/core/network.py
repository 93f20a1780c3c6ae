"""
Fully Connected Classifier

A sigmoid-hidden-layer network with a softmax readout, trained by plain
gradient descent on the averaged cross entropy plus elastic-net
(L1 + L2) weight penalties. Dropout is standard (non-inverted): during
training or Monte Carlo testing dropped neurons output 0 and kept ones
pass unscaled; deterministic inference scales each layer's outgoing
contribution by its retain probability (weight averaging).

Layer conventions: ``weights[i]`` maps layer i to layer i+1 and has shape
(next_size, prev_size); layer 0 is the input, the last matrix is the
readout.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from .connectivity import Dataset
from .errors import DivergedTrainingError, InvalidInputError, NetworkFormatError
from .rng import make_rng

logger = logging.getLogger(__name__)

FORMAT_NAME = "connlab.network"
FORMAT_VERSION = 1
LOG_GUARD = 1e-300
DEFAULT_DROPOUT = 0.2

Multiplier = Union[float, np.ndarray]


class ForwardMode(Enum):
    """How dropout layers behave in a forward pass."""
    DETERMINISTIC = "deterministic"
    TRAIN_DROPOUT = "train_dropout"
    MC_DROPOUT = "mc_dropout"


@dataclass(frozen=True)
class NetworkSpec:
    """
    Architecture of a network.

    Attributes:
        input_dim: Length of the input vector
        hidden_sizes: Neurons per hidden layer
        n_classes: Softmax outputs
        dropout_rates: Per-hidden-layer rate in [0, 1); defaults to
            DEFAULT_DROPOUT on the last hidden layer and 0 elsewhere
    """
    input_dim: int
    hidden_sizes: Tuple[int, ...]
    n_classes: int = 2
    dropout_rates: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.dropout_rates is None:
            rates = [0.0] * len(self.hidden_sizes)
            if rates:
                rates[-1] = DEFAULT_DROPOUT
            object.__setattr__(self, "dropout_rates", tuple(rates))
        else:
            object.__setattr__(self, "dropout_rates", tuple(float(p) for p in self.dropout_rates))
        if self.input_dim < 1 or self.n_classes < 2:
            raise InvalidInputError(f"invalid spec: input_dim={self.input_dim}, n_classes={self.n_classes}")
        if any(h < 1 for h in self.hidden_sizes):
            raise InvalidInputError(f"hidden sizes must be positive, got {self.hidden_sizes}")
        if len(self.dropout_rates) != len(self.hidden_sizes):
            raise InvalidInputError("need one dropout rate per hidden layer")
        if any(not 0.0 <= p < 1.0 for p in self.dropout_rates):
            raise InvalidInputError(f"dropout rates must lie in [0, 1), got {self.dropout_rates}")

    @classmethod
    def from_structure(
        cls,
        input_dim: int,
        n_layers: int,
        first_layer_neurons: int,
        n_classes: int = 2,
        dropout_rate: float = DEFAULT_DROPOUT,
    ) -> "NetworkSpec":
        """
        Half-size rule: first hidden layer N, every following layer N/2.

        Dropout is applied to the last hidden layer only.
        """
        if n_layers < 1:
            raise InvalidInputError(f"need at least one hidden layer, got {n_layers}")
        half = max(1, first_layer_neurons // 2)
        sizes = (first_layer_neurons,) + (half,) * (n_layers - 1)
        rates = (0.0,) * (n_layers - 1) + (dropout_rate,)
        return cls(input_dim, sizes, n_classes, rates)

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        return (self.input_dim,) + self.hidden_sizes + (self.n_classes,)

    def with_dropout_rates(self, rates: Sequence[float]) -> "NetworkSpec":
        return NetworkSpec(self.input_dim, self.hidden_sizes, self.n_classes, tuple(rates))

    def to_dict(self) -> Dict:
        return {
            "input_dim": self.input_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "n_classes": self.n_classes,
            "dropout_rates": list(self.dropout_rates),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "NetworkSpec":
        return cls(
            int(data["input_dim"]),
            tuple(data["hidden_sizes"]),
            int(data.get("n_classes", 2)),
            tuple(data["dropout_rates"]) if data.get("dropout_rates") is not None else None,
        )


@dataclass(eq=False)
class Network:
    """Parameters of a network. Treated as immutable once built."""
    spec: NetworkSpec
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        sizes = self.spec.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise InvalidInputError(f"expected {len(sizes) - 1} layers of parameters")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise InvalidInputError(
                    f"layer {i}: weight {w.shape} / bias {b.shape} do not match spec {sizes}"
                )

    @property
    def n_hidden(self) -> int:
        return len(self.spec.hidden_sizes)

    def copy(self) -> "Network":
        return Network(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def with_dropout_rates(self, rates: Sequence[float]) -> "Network":
        """Same parameters under different dropout rates."""
        return Network(self.spec.with_dropout_rates(rates), self.weights, self.biases)

    def fingerprint(self) -> str:
        """Short content hash of the serialized network."""
        return hashlib.sha256(to_json(self).encode("utf-8")).hexdigest()[:16]

    def predict_labels(self, X: np.ndarray) -> np.ndarray:
        return predict_batch(self, X)[1]

    def test_loss(self, X: np.ndarray, y: np.ndarray) -> float:
        return cross_entropy(forward(self, X).probs, y)

    def __repr__(self):
        return f"Network({'-'.join(str(s) for s in self.spec.layer_sizes)})"


@dataclass
class Activations:
    """
    Forward-pass record.

    Attributes:
        hidden: Sigmoid activations A^l per hidden layer (before dropout)
        outputs: What each hidden layer feeds forward (after mask or scale)
        scores: Readout scores S
        probs: Softmax class probabilities q
    """
    hidden: List[np.ndarray]
    outputs: List[np.ndarray]
    scores: np.ndarray
    probs: np.ndarray


@dataclass
class Prediction:
    """Class probabilities and the argmax label."""
    probs: np.ndarray
    label: int


@dataclass
class LossBreakdown:
    """Averaged data loss plus the two penalty terms."""
    data_loss: float
    l1_term: float
    l2_term: float
    total: float


@dataclass
class TrainConfig:
    """
    Gradient descent settings.

    ``dropout_rate`` is the rate placed on the last hidden layer when a
    spec is built from a structure; ``train`` itself honours the rates in
    the network's spec. ``batch_size`` None means full batch, so one
    iteration is one epoch.
    """
    learning_rate: float = 0.5
    iterations: int = 300
    l1_weight: float = 1e-6
    l2_weight: float = 1e-4
    dropout_rate: float = DEFAULT_DROPOUT
    batch_size: Optional[int] = None
    seed: int = 0
    target_loss: float = 0.1

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InvalidInputError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.iterations < 1:
            raise InvalidInputError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size is not None and self.batch_size < 1:
            raise InvalidInputError(f"batch_size must be positive, got {self.batch_size}")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "TrainConfig":
        return cls(**data)


@dataclass
class Gradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]


@dataclass
class TrainResult:
    """Trained copy of the network and its per-iteration total loss."""
    network: Network
    loss_trace: np.ndarray
    converged: bool
    history: Dict[str, List[float]] = field(default_factory=dict)


def init_network(spec: NetworkSpec, seed: int) -> Network:
    """
    Uniform fan-based initialization, zero biases.

    Weights ~ U(-sqrt(6 / (fan_in + fan_out)), +sqrt(6 / (fan_in + fan_out))).
    """
    rng = make_rng(seed)
    sizes = spec.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Network(spec, weights, biases)


def sigmoid(x):
    """Logistic function 1 / (1 + e^-x), stable for large |x|."""
    return special.expit(x)


def softmax(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax (max-shifted)."""
    return special.softmax(scores, axis=-1)


def _as_batch(net: Network, x: np.ndarray) -> Tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.spec.input_dim:
        raise InvalidInputError(f"input has shape {np.shape(x)}, network expects length {net.spec.input_dim}")
    return X, single


def deterministic_multipliers(net: Network) -> List[float]:
    """Weight-averaging scale (1 - p) per hidden layer."""
    return [1.0 - p for p in net.spec.dropout_rates]


def sample_masks(net: Network, n: int, rng: np.random.Generator) -> List[Multiplier]:
    """Bernoulli keep-masks (n x size) for layers with a positive rate, 1.0 elsewhere."""
    masks: List[Multiplier] = []
    for size, p in zip(net.spec.hidden_sizes, net.spec.dropout_rates):
        if p > 0.0:
            masks.append((rng.random((n, size)) >= p).astype(np.float64))
        else:
            masks.append(1.0)
    return masks


def propagate(
    net: Network,
    X: np.ndarray,
    multipliers: Sequence[Multiplier],
    readout_keep: Optional[np.ndarray] = None,
) -> Activations:
    """
    Forward pass with explicit per-layer multipliers.

    Args:
        net: Network
        X: Inputs, one row per example
        multipliers: Per hidden layer, a scalar scale or an (n x size) mask
        readout_keep: Optional 0/1 vector zeroing last-hidden contributions

    Returns:
        Activations of the batch
    """
    hidden, outputs = [], []
    h = X
    for w, b, m in zip(net.weights[:-1], net.biases[:-1], multipliers):
        a = sigmoid(h @ w.T + b)
        hidden.append(a)
        h = a * m
        outputs.append(h)
    if readout_keep is not None:
        h = h * readout_keep
    scores = h @ net.weights[-1].T + net.biases[-1]
    return Activations(hidden, outputs, scores, softmax(scores))


def forward(
    net: Network,
    x: np.ndarray,
    mode: ForwardMode = ForwardMode.DETERMINISTIC,
    masks: Optional[Sequence[Optional[np.ndarray]]] = None,
    rng: Optional[np.random.Generator] = None,
) -> Activations:
    """
    Evaluate the network on one input vector or a batch.

    Args:
        net: Network
        x: Input vector (input_dim,) or batch (n, input_dim)
        mode: DETERMINISTIC (weight averaging), TRAIN_DROPOUT (uses
            ``masks``, None entries meaning keep-all) or MC_DROPOUT
            (samples masks from ``rng``)
        masks: Per-hidden-layer keep-masks for TRAIN_DROPOUT
        rng: Generator for MC_DROPOUT

    Returns:
        Activations (1-D arrays for a single input)
    """
    X, single = _as_batch(net, x)
    if mode is ForwardMode.DETERMINISTIC:
        multipliers: List[Multiplier] = deterministic_multipliers(net)
    elif mode is ForwardMode.TRAIN_DROPOUT:
        if masks is None or len(masks) != net.n_hidden:
            raise InvalidInputError("TRAIN_DROPOUT needs one mask (or None) per hidden layer")
        multipliers = [1.0 if m is None else np.asarray(m, dtype=np.float64) for m in masks]
    elif mode is ForwardMode.MC_DROPOUT:
        if rng is None:
            raise InvalidInputError("MC_DROPOUT needs a random generator")
        multipliers = sample_masks(net, X.shape[0], rng)
    else:
        raise InvalidInputError(f"unknown forward mode {mode}")
    acts = propagate(net, X, multipliers)
    if single:
        acts = Activations(
            [a[0] for a in acts.hidden], [o[0] for o in acts.outputs], acts.scores[0], acts.probs[0]
        )
    return acts


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean -log q(label), guarded at LOG_GUARD."""
    probs = np.atleast_2d(probs)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    picked = probs[np.arange(labels.size), labels]
    return float(-np.mean(np.log(np.maximum(picked, LOG_GUARD))))


def loss(
    net: Network,
    X: np.ndarray,
    y: np.ndarray,
    l1_weight: float = 1e-6,
    l2_weight: float = 1e-4,
    masks: Optional[Sequence[Multiplier]] = None,
) -> LossBreakdown:
    """
    Averaged cross entropy plus elastic-net penalties on the weights.

    l1 = beta * sum |W|, l2 = gamma / 2 * sum W^2; biases are not penalized.
    ``masks`` None evaluates the deterministic (weight-averaged) network.
    """
    X, _ = _as_batch(net, X)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.size == 0 or y.size != X.shape[0]:
        raise InvalidInputError(f"need a non-empty batch with one label per row, got {X.shape[0]} rows / {y.size} labels")
    multipliers = deterministic_multipliers(net) if masks is None else masks
    data_loss = cross_entropy(propagate(net, X, multipliers).probs, y)
    l1 = l1_weight * sum(float(np.abs(w).sum()) for w in net.weights)
    l2 = 0.5 * l2_weight * sum(float(np.square(w).sum()) for w in net.weights)
    return LossBreakdown(data_loss, l1, l2, data_loss + l1 + l2)


def gradients(
    net: Network,
    X: np.ndarray,
    y: np.ndarray,
    l1_weight: float = 1e-6,
    l2_weight: float = 1e-4,
    masks: Optional[Sequence[Multiplier]] = None,
) -> Gradients:
    """
    Analytic gradients of ``loss`` by backpropagation.

    Output delta is (q - p) / n; sigmoid derivative A(1 - A); masks zero
    dropped units; L1 subgradient sign(w) (0 at w = 0); L2 gradient gamma * w.
    """
    X, _ = _as_batch(net, X)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    n = X.shape[0]
    multipliers = deterministic_multipliers(net) if masks is None else masks
    acts = propagate(net, X, multipliers)

    target = np.zeros_like(acts.probs)
    target[np.arange(n), y] = 1.0
    delta = (acts.probs - target) / n

    inputs = [X] + acts.outputs
    gw: List[np.ndarray] = [None] * len(net.weights)
    gb: List[np.ndarray] = [None] * len(net.biases)
    for layer in range(len(net.weights) - 1, -1, -1):
        gw[layer] = delta.T @ inputs[layer]
        gb[layer] = delta.sum(axis=0)
        if layer == 0:
            break
        a = acts.hidden[layer - 1]
        delta = (delta @ net.weights[layer]) * multipliers[layer - 1] * a * (1.0 - a)

    for layer, w in enumerate(net.weights):
        gw[layer] = gw[layer] + l1_weight * np.sign(w) + l2_weight * w
    return Gradients(gw, gb)


def check_gradients(
    net: Network,
    X: np.ndarray,
    y: np.ndarray,
    l1_weight: float = 1e-6,
    l2_weight: float = 1e-4,
    masks: Optional[Sequence[Multiplier]] = None,
    h: float = 1e-5,
    floor: float = 1e-4,
) -> float:
    """
    Max relative error between analytic and central-difference gradients.

    Relative error per coordinate is |a - n| / max(|a|, |n|, floor).
    """
    analytic = gradients(net, X, y, l1_weight, l2_weight, masks)
    shifted = net.copy()
    worst = 0.0
    for params, grads in ((shifted.weights, analytic.weights), (shifted.biases, analytic.biases)):
        for p, g in zip(params, grads):
            for idx in np.ndindex(p.shape):
                orig = p[idx]
                p[idx] = orig + h
                up = loss(shifted, X, y, l1_weight, l2_weight, masks).total
                p[idx] = orig - h
                down = loss(shifted, X, y, l1_weight, l2_weight, masks).total
                p[idx] = orig
                numeric = (up - down) / (2.0 * h)
                err = abs(g[idx] - numeric) / max(abs(g[idx]), abs(numeric), floor)
                worst = max(worst, err)
    return worst


def _finite(net: Network) -> bool:
    return all(np.isfinite(w).all() for w in net.weights) and all(np.isfinite(b).all() for b in net.biases)


def train_arrays(net: Network, X: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> TrainResult:
    """
    Gradient descent on a private copy of ``net``.

    Each iteration resamples dropout masks; full batch by default, else one
    pass of shuffled mini-batches. The trace holds the deterministic total
    loss on all of X after every iteration.

    Raises:
        DivergedTrainingError: if the loss or any parameter becomes non-finite
    """
    X, _ = _as_batch(net, X)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    rng = make_rng(cfg.seed)
    model = net.copy()
    n = X.shape[0]
    batch = n if cfg.batch_size is None else min(cfg.batch_size, n)
    trace = np.empty(cfg.iterations)
    data_trace = np.empty(cfg.iterations)

    for it in range(cfg.iterations):
        order = np.arange(n) if batch == n else rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            masks = sample_masks(model, idx.size, rng)
            grads = gradients(model, X[idx], y[idx], cfg.l1_weight, cfg.l2_weight, masks)
            for layer in range(len(model.weights)):
                model.weights[layer] -= cfg.learning_rate * grads.weights[layer]
                model.biases[layer] -= cfg.learning_rate * grads.biases[layer]
        current = loss(model, X, y, cfg.l1_weight, cfg.l2_weight)
        if not np.isfinite(current.total) or not _finite(model):
            logger.error("training diverged at iteration %d (lr=%g)", it + 1, cfg.learning_rate)
            raise DivergedTrainingError(it + 1)
        trace[it] = current.total
        data_trace[it] = current.data_loss

    converged = bool(trace[-1] <= cfg.target_loss)
    logger.info(
        "trained %r for %d iterations: final loss %.4f (target %.3g %s)",
        model, cfg.iterations, trace[-1], cfg.target_loss, "reached" if converged else "not reached",
    )
    return TrainResult(model, trace, converged, {"data_loss": data_trace.tolist()})


def train(net: Network, data: "Dataset", cfg: TrainConfig) -> TrainResult:
    """Train on a Dataset's preprocessed features and labels."""
    if data.input_dim != net.spec.input_dim:
        raise InvalidInputError(f"dataset input_dim {data.input_dim} != network input_dim {net.spec.input_dim}")
    return train_arrays(net, data.features, data.labels, cfg)


def predict(net: Network, x: np.ndarray) -> Prediction:
    """Deterministic-mode prediction; ties go to the lower class index."""
    probs = forward(net, x).probs
    if probs.ndim != 1:
        raise InvalidInputError("predict takes a single input vector; use predict_batch")
    return Prediction(probs, int(np.argmax(probs)))


def predict_batch(net: Network, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Probabilities and labels for every row of X."""
    X, _ = _as_batch(net, X)
    probs = forward(net, X).probs
    return probs, np.argmax(probs, axis=1)


def accuracy(labels_pred: np.ndarray, labels_true: np.ndarray) -> float:
    return float(np.mean(np.asarray(labels_pred) == np.asarray(labels_true)))


def to_json(net: Network) -> str:
    """Versioned JSON document; floats are written in shortest round-trip form."""
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "spec": net.spec.to_dict(),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }
    return json.dumps(doc, indent=1)


def from_json(text: str) -> Network:
    """Parse and validate a network document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise NetworkFormatError(f"parse error: {e}") from e
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise NetworkFormatError(f"not a {FORMAT_NAME} document")
    if doc.get("version") != FORMAT_VERSION:
        raise NetworkFormatError(f"unsupported version {doc.get('version')!r}, expected {FORMAT_VERSION}")
    try:
        spec = NetworkSpec.from_dict(doc["spec"])
        weights = [np.array(w, dtype=np.float64, ndmin=2) for w in doc["weights"]]
        biases = [np.array(b, dtype=np.float64, ndmin=1) for b in doc["biases"]]
        net = Network(spec, weights, biases)
    except (KeyError, TypeError, ValueError) as e:
        raise NetworkFormatError(f"shape mismatch or missing field: {e}") from e
    if not _finite(net):
        raise NetworkFormatError("non-finite parameter")
    return net


def save_network(net: Network, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(to_json(net))
        f.write("\n")


def load_network(path: str) -> Network:
    with open(path, encoding="utf-8") as f:
        return from_json(f.read())
