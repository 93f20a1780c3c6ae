"""
Linear SVM Baseline

Primal L2-regularized hinge-loss SVM trained by stochastic subgradient
descent with step 1/(lambda * t), returning the averaged iterate. The
bias is learned as the weight of a constant-1 input column and is
regularized together with w.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List

import numpy as np

from .connectivity import Dataset
from .errors import DivergedTrainingError, InvalidInputError, NetworkFormatError
from .rng import make_rng

logger = logging.getLogger(__name__)

FORMAT_NAME = "connlab.linear"
FORMAT_VERSION = 1
MONOTONE_TOL = 1e-6


@dataclass
class SVMConfig:
    """
    Solver settings.

    Attributes:
        lam: L2 regularization strength (> 0)
        epochs: Passes over the shuffled training set
        seed: Seed of the sampling order
        project: Project each iterate onto the ball of radius 1/sqrt(lam)
    """
    lam: float = 1e-3
    epochs: int = 20
    seed: int = 0
    project: bool = True

    def __post_init__(self):
        if not self.lam > 0:
            raise InvalidInputError(f"lambda must be > 0, got {self.lam}")
        if self.epochs < 1:
            raise InvalidInputError(f"epochs must be >= 1, got {self.epochs}")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "SVMConfig":
        return cls(**data)


@dataclass(eq=False)
class LinearModel:
    """Hyperplane w.x + b; positive side is class 1."""
    w: np.ndarray
    b: float
    lam: float
    objective_trace: List[float] = field(default_factory=list)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        self.b = float(self.b)
        if not (np.isfinite(self.w).all() and np.isfinite(self.b)):
            raise InvalidInputError("linear model has non-finite parameters")

    @property
    def input_dim(self) -> int:
        return self.w.size

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.input_dim:
            raise InvalidInputError(f"input has length {X.shape[-1]}, model expects {self.input_dim}")
        return X @ self.w + self.b

    def predict_labels(self, X: np.ndarray) -> np.ndarray:
        return (self.decision(np.atleast_2d(X)) > 0).astype(np.int64)

    def test_loss(self, X: np.ndarray, y: np.ndarray) -> float:
        """Regularized hinge objective on (X, y)."""
        return hinge_objective(self.w, self.b, self.lam, np.atleast_2d(X), _signed(y))

    def __repr__(self):
        return f"LinearModel(dim={self.input_dim}, lambda={self.lam:g})"


def _signed(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y).reshape(-1)
    if not np.isin(y, (0, 1)).all():
        raise InvalidInputError("linear SVM supports two classes labelled 0 and 1")
    return np.where(y == 1, 1.0, -1.0)


def hinge_objective(w: np.ndarray, b: float, lam: float, X: np.ndarray, s: np.ndarray) -> float:
    """lam/2 * (|w|^2 + b^2) + mean hinge, with s in {-1, +1}."""
    margins = s * (X @ w + b)
    return float(0.5 * lam * (w @ w + b * b) + np.mean(np.maximum(0.0, 1.0 - margins)))


def train_linear_arrays(X: np.ndarray, y: np.ndarray, cfg: SVMConfig) -> LinearModel:
    """
    Pegasos on (X, y) with labels 0/1 mapped to -1/+1.

    One step per sample; the averaged iterate is tracked alongside and its
    objective recorded after every epoch.

    Raises:
        DivergedTrainingError: if an iterate becomes non-finite
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    s = _signed(y)
    if X.shape[0] != s.size:
        raise InvalidInputError(f"{X.shape[0]} inputs but {s.size} labels")
    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    rng = make_rng(cfg.seed)
    radius = 1.0 / np.sqrt(cfg.lam)

    w = np.zeros(d + 1)
    avg = np.zeros(d + 1)
    trace: List[float] = []
    t = 0
    for epoch in range(cfg.epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (cfg.lam * t)
            violated = s[i] * (Xa[i] @ w) < 1.0
            w *= 1.0 - eta * cfg.lam
            if violated:
                w += eta * s[i] * Xa[i]
            if cfg.project:
                norm = np.linalg.norm(w)
                if norm > radius:
                    w *= radius / norm
            avg += (w - avg) / t
        if not np.isfinite(avg).all():
            logger.error("linear SVM diverged in epoch %d", epoch + 1)
            raise DivergedTrainingError(t)
        trace.append(hinge_objective(avg[:-1], avg[-1], cfg.lam, X, s))
        if epoch and trace[-1] > trace[-2] + MONOTONE_TOL:
            logger.warning("averaged hinge objective rose in epoch %d: %.6g -> %.6g", epoch + 1, trace[-2], trace[-1])

    logger.info("linear SVM: %d epochs, objective %.4g", cfg.epochs, trace[-1])
    return LinearModel(avg[:-1].copy(), float(avg[-1]), cfg.lam, trace)


def train_linear_svm(data: Dataset, cfg: SVMConfig) -> LinearModel:
    return train_linear_arrays(data.features, data.labels, cfg)


def predict_linear(model: LinearModel, x: np.ndarray) -> int:
    """Class 1 when w.x + b > 0, else class 0 (ties included)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInputError("predict_linear takes a single input vector")
    return int(model.decision(x) > 0)


def to_json(model: LinearModel) -> str:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "lambda": model.lam,
        "w": model.w.tolist(),
        "b": model.b,
        "objective_trace": list(model.objective_trace),
    }
    return json.dumps(doc, indent=1)


def from_json(text: str) -> LinearModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise NetworkFormatError(f"parse error: {e}") from e
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise NetworkFormatError(f"not a {FORMAT_NAME} document")
    if doc.get("version") != FORMAT_VERSION:
        raise NetworkFormatError(f"unsupported version {doc.get('version')!r}, expected {FORMAT_VERSION}")
    try:
        return LinearModel(doc["w"], doc["b"], doc["lambda"], list(doc.get("objective_trace", [])))
    except (KeyError, TypeError, ValueError) as e:
        raise NetworkFormatError(f"bad linear model document: {e}") from e


def save_linear_model(model: LinearModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(to_json(model))
        f.write("\n")


def load_linear_model(path: str) -> LinearModel:
    with open(path, encoding="utf-8") as f:
        return from_json(f.read())

