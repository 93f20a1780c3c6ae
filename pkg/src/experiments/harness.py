"""
Permuted Cross-Validation Harness

Runs the evaluation protocol used for every model comparison:

1. Randomly permuted k-fold cross validation, repeated over permutations
2. Structure sweeps (hidden layer count x first-layer width x scale)
3. Repeatability of the top back-projected feature across folds

Each (permutation, fold) cell draws its seed from (master_seed,
permutation, fold), so results do not depend on the worker count or the
order in which cells finish.
"""

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from ..core.attribution import (
    BackProjectionPolicy,
    CorrelationSummary,
    InputPattern,
    PairCorrelation,
    back_project,
    feature_correlation,
    rank_features,
    summarize_correlations,
)
from ..core.baselines import SVMConfig, train_linear_svm
from ..core.connectivity import Dataset
from ..core.errors import InvalidInputError, ReportIntegrityError
from ..core.network import Network, NetworkSpec, TrainConfig, init_network, train
from ..core.rng import derive_seed, make_rng

logger = logging.getLogger(__name__)

INTEGRITY_TOL = 1e-12
SELECTIONS = ("top", "class0", "class1")


class Classifier(Protocol):
    def predict_labels(self, X: np.ndarray) -> np.ndarray: ...

    def test_loss(self, X: np.ndarray, y: np.ndarray) -> float: ...


ModelFactory = Callable[[Dataset, int], Classifier]
PayloadFn = Callable[[Classifier, Dataset], Any]


@dataclass
class CVConfig:
    """
    Cross-validation protocol.

    Attributes:
        n_permutations: Repetitions of the shuffled split
        n_folds: Folds per permutation
        master_seed: Root of every derived seed
        jobs: Worker threads (does not change results)
        stratified: Keep class proportions equal across folds
        progress: Show a progress bar
    """
    n_permutations: int = 50
    n_folds: int = 2
    master_seed: int = 0
    jobs: int = 1
    stratified: bool = False
    progress: bool = False

    def __post_init__(self):
        if self.n_folds < 2:
            raise InvalidInputError(f"n_folds must be >= 2, got {self.n_folds}")
        if self.n_permutations < 1:
            raise InvalidInputError(f"n_permutations must be >= 1, got {self.n_permutations}")
        if self.jobs < 1:
            raise InvalidInputError(f"jobs must be >= 1, got {self.jobs}")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "CVConfig":
        return cls(**data)


@dataclass
class FoldRecord:
    """Outcome of one (permutation, fold) cell."""
    permutation: int
    fold: int
    seed: int
    n_train: int
    n_test: int
    n_correct: int = 0
    accuracy: Optional[float] = None
    loss: Optional[float] = None
    model_ref: Optional[str] = None
    error: Optional[str] = None
    payload: Any = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_dict(self) -> Dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "payload"}
        if isinstance(self.payload, dict):
            out["payload"] = self.payload
        return out


@dataclass
class ExperimentReport:
    """Raw fold records plus aggregates over per-permutation accuracies."""
    config: CVConfig
    records: List[FoldRecord]
    cell: Dict[str, Any] = field(default_factory=dict)

    @property
    def failed_permutations(self) -> List[int]:
        return sorted({r.permutation for r in self.records if r.failed})

    def permutation_accuracies(self) -> Dict[int, float]:
        """Pooled correct / total over the folds of each successful permutation."""
        failed = set(self.failed_permutations)
        correct: Dict[int, int] = {}
        total: Dict[int, int] = {}
        for r in self.records:
            if r.permutation in failed:
                continue
            correct[r.permutation] = correct.get(r.permutation, 0) + r.n_correct
            total[r.permutation] = total.get(r.permutation, 0) + r.n_test
        return {p: correct[p] / total[p] for p in sorted(correct)}

    def aggregate(self) -> Tuple[float, float]:
        """(mean, std) of the per-permutation accuracies; std uses ddof=1."""
        accs = np.array(list(self.permutation_accuracies().values()), dtype=np.float64)
        if accs.size == 0:
            return float("nan"), float("nan")
        std = float(np.std(accs, ddof=1)) if accs.size > 1 else 0.0
        return float(np.mean(accs)), std

    @property
    def mean_accuracy(self) -> float:
        return self.aggregate()[0]

    @property
    def std_accuracy(self) -> float:
        return self.aggregate()[1]

    def verify(self, mean: float, std: float) -> None:
        """Check stated aggregates against a recomputation from the raw records."""
        accs = []
        for p in sorted({r.permutation for r in self.records} - set(self.failed_permutations)):
            rows = [r for r in self.records if r.permutation == p]
            accs.append(sum(r.n_correct for r in rows) / sum(r.n_test for r in rows))
        if any(not 0.0 <= a <= 1.0 for a in accs):
            raise ReportIntegrityError("accuracy outside [0, 1]")
        if not accs:
            if np.isfinite(mean) or np.isfinite(std):
                raise ReportIntegrityError("aggregates stated for a report with no successful permutation")
            return
        expected_mean = float(np.mean(accs))
        expected_std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
        if abs(expected_mean - mean) > INTEGRITY_TOL or abs(expected_std - std) > INTEGRITY_TOL:
            raise ReportIntegrityError(
                f"aggregates ({mean}, {std}) differ from recomputation ({expected_mean}, {expected_std})"
            )

    def to_dict(self) -> Dict:
        mean, std = self.aggregate()
        self.verify(mean, std)
        cfg = self.config.to_dict()
        cfg.pop("jobs")
        cfg.pop("progress")
        return {
            "cell": dict(self.cell),
            "config": cfg,
            "records": [r.to_dict() for r in self.records],
            "permutation_accuracies": {str(p): a for p, a in self.permutation_accuracies().items()},
            "failed_permutations": self.failed_permutations,
            "mean_accuracy": mean,
            "std_accuracy": std,
        }


def fold_assignments(labels: np.ndarray, cfg: CVConfig, permutation: int) -> List[np.ndarray]:
    """
    Test-fold indices for one permutation.

    Plain splitting shuffles all subjects and cuts them into near-equal
    folds; stratified splitting shuffles within each class and deals the
    concatenation round-robin. Either way fold sizes differ by at most 1.
    """
    labels = np.asarray(labels)
    n = labels.size
    if n < 2 * cfg.n_folds:
        raise InvalidInputError(f"dataset of {n} subjects is too small for {cfg.n_folds} folds")
    rng = make_rng(derive_seed(cfg.master_seed, permutation))
    if not cfg.stratified:
        return [np.sort(f) for f in np.array_split(rng.permutation(n), cfg.n_folds)]
    order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
    return [np.sort(order[k::cfg.n_folds]) for k in range(cfg.n_folds)]


def _model_ref(model: Classifier) -> str:
    fingerprint = getattr(model, "fingerprint", None)
    return fingerprint() if callable(fingerprint) else repr(model)


def _run_cell(
    data: Dataset,
    factory: ModelFactory,
    cfg: CVConfig,
    permutation: int,
    fold: int,
    test_idx: np.ndarray,
    payload_fn: Optional[PayloadFn],
) -> FoldRecord:
    train_idx = np.setdiff1d(np.arange(len(data)), test_idx)
    seed = derive_seed(cfg.master_seed, permutation, fold)
    record = FoldRecord(permutation, fold, seed, int(train_idx.size), int(test_idx.size))
    try:
        train_set = data.subset(train_idx)
        X_test, y_test = data.features[test_idx], data.labels[test_idx]
        model = factory(train_set, seed)
        predicted = np.asarray(model.predict_labels(X_test))
        record.n_correct = int(np.sum(predicted == y_test))
        record.accuracy = record.n_correct / record.n_test
        record.loss = float(model.test_loss(X_test, y_test))
        record.model_ref = _model_ref(model)
        if payload_fn is not None:
            record.payload = payload_fn(model, train_set)
    except Exception as e:  # a failing cell must not stop the run
        logger.warning("permutation %d fold %d failed: %s: %s", permutation, fold, type(e).__name__, e)
        record.error = f"{type(e).__name__}: {e}"
    return record


def permuted_cv(
    data: Dataset,
    model_factory: ModelFactory,
    cfg: CVConfig,
    payload_fn: Optional[PayloadFn] = None,
    cell: Optional[Dict[str, Any]] = None,
) -> ExperimentReport:
    """
    Randomly permuted k-fold cross validation.

    Args:
        data: Full dataset
        model_factory: (training set, derived seed) -> trained classifier
        cfg: Protocol settings
        payload_fn: Optional (model, training set) -> extra per-fold result
        cell: Labels of this run (layers, neurons, scale, model)

    Returns:
        ExperimentReport with records sorted by (permutation, fold)
    """
    tasks = [
        (p, f, test_idx)
        for p in range(cfg.n_permutations)
        for f, test_idx in enumerate(fold_assignments(data.labels, cfg, p))
    ]
    data.features  # preprocess once; fold subsets reuse the rows

    desc = "cv " + " ".join(f"{k}={v}" for k, v in (cell or {}).items())
    parallel = Parallel(n_jobs=cfg.jobs, prefer="threads", return_as="generator")
    cells = parallel(delayed(_run_cell)(data, model_factory, cfg, p, f, idx, payload_fn) for p, f, idx in tasks)
    records = list(tqdm(cells, total=len(tasks), desc=desc, disable=not cfg.progress))
    records.sort(key=lambda r: (r.permutation, r.fold))

    report = ExperimentReport(cfg, records, dict(cell or {}))
    mean, std = report.aggregate()
    logger.info(
        "cv %s: mean accuracy %.4f (std %.4f) over %d permutations, %d failed",
        report.cell, mean, std, cfg.n_permutations, len(report.failed_permutations),
    )
    return report


def dnn_factory(n_layers: int, first_layer_neurons: int, train_cfg: TrainConfig) -> ModelFactory:
    """Factory building a half-size-rule network and training it on the fold."""

    def factory(train_set: Dataset, seed: int) -> Network:
        spec = NetworkSpec.from_structure(
            train_set.input_dim, n_layers, first_layer_neurons, 2, train_cfg.dropout_rate
        )
        net = init_network(spec, derive_seed(seed, 0))
        cfg = TrainConfig.from_dict({**train_cfg.to_dict(), "seed": derive_seed(seed, 1)})
        return train(net, train_set, cfg).network

    return factory


def linear_svm_factory(svm_cfg: SVMConfig) -> ModelFactory:
    def factory(train_set: Dataset, seed: int):
        return train_linear_svm(train_set, SVMConfig.from_dict({**svm_cfg.to_dict(), "seed": seed}))

    return factory


@dataclass
class StructureGrid:
    """Hidden layer counts x first-layer widths."""
    layer_counts: Tuple[int, ...] = (1, 2, 3)
    first_layer_neurons: Tuple[int, ...] = (20, 50, 100, 200)

    def __post_init__(self):
        self.layer_counts = tuple(int(v) for v in self.layer_counts)
        self.first_layer_neurons = tuple(int(v) for v in self.first_layer_neurons)
        if not self.layer_counts or not self.first_layer_neurons:
            raise InvalidInputError("structure grid is empty")
        if min(self.layer_counts) < 1 or min(self.first_layer_neurons) < 1:
            raise InvalidInputError("layer counts and widths must be positive")

    def cells(self) -> List[Tuple[int, int]]:
        return [(l, n) for l in self.layer_counts for n in self.first_layer_neurons]

    def to_dict(self) -> Dict:
        return {"layer_counts": list(self.layer_counts), "first_layer_neurons": list(self.first_layer_neurons)}

    @classmethod
    def from_dict(cls, data: Dict) -> "StructureGrid":
        return cls(tuple(data["layer_counts"]), tuple(data["first_layer_neurons"]))


def structure_sweep(
    datasets: Sequence[Dataset],
    grid: StructureGrid,
    train_cfg: TrainConfig,
    cfg: CVConfig,
) -> List[ExperimentReport]:
    """
    One permuted_cv per (scale, layers, neurons) cell.

    Cells of one dataset share fold splits, which pairs the structure
    comparison within every permutation.
    """
    if isinstance(datasets, Dataset):
        datasets = [datasets]
    reports = []
    for data in datasets:
        for n_layers, neurons in grid.cells():
            cell = {"model": "dnn", "layers": n_layers, "neurons": neurons, "scale": data.n_nodes}
            reports.append(permuted_cv(data, dnn_factory(n_layers, neurons, train_cfg), cfg, cell=cell))
    return reports


def summary_frame(reports: Sequence[ExperimentReport]) -> pd.DataFrame:
    """One row per report: layers, neurons, scale, mean_acc, std_acc (linear models use layers = neurons = 0)."""
    rows = []
    for r in reports:
        mean, std = r.aggregate()
        rows.append({
            "layers": int(r.cell.get("layers", 0)),
            "neurons": int(r.cell.get("neurons", 0)),
            "scale": int(r.cell.get("scale", 0)),
            "mean_acc": mean,
            "std_acc": std,
        })
    return pd.DataFrame(rows, columns=["layers", "neurons", "scale", "mean_acc", "std_acc"])


@dataclass
class RepeatabilityResult:
    """Patterns collected from every fold model and their pairwise correlations."""
    patterns: List[InputPattern]
    correlations: List[PairCorrelation]
    summary: CorrelationSummary
    report: ExperimentReport


def select_feature(net: Network, selection: str = "top") -> int:
    """Neuron index of the top feature overall, or of one class."""
    if selection not in SELECTIONS:
        raise InvalidInputError(f"selection must be one of {SELECTIONS}, got {selection!r}")
    ranking = rank_features(net)
    if selection == "top":
        return ranking.top().neuron_index
    ranked = ranking.by_class(0 if selection == "class0" else 1)
    if not ranked:
        raise InvalidInputError(f"network has no {selection} feature")
    return ranked[0].neuron_index


def repeatability_study(
    data: Dataset,
    n_layers: int,
    first_layer_neurons: int,
    train_cfg: TrainConfig,
    cfg: CVConfig,
    policy: Optional[BackProjectionPolicy] = None,
    selection: str = "top",
    align: bool = True,
    model_factory: Optional[ModelFactory] = None,
) -> RepeatabilityResult:
    """
    Back-project the top feature of every (permutation, fold) model and
    correlate all pairs: n_permutations * n_folds patterns.

    ``model_factory`` replaces the default half-size-rule network factory.
    """
    policy = policy or BackProjectionPolicy()
    factory = model_factory or dnn_factory(n_layers, first_layer_neurons, train_cfg)

    def payload(model, train_set):
        return back_project(model, model.n_hidden, select_feature(model, selection), policy)

    cell = {"model": "dnn", "layers": n_layers, "neurons": first_layer_neurons, "scale": data.n_nodes}
    report = permuted_cv(data, factory, cfg, payload, cell)
    patterns = [r.payload for r in report.records if not r.failed]
    correlations = feature_correlation(patterns, align=align)
    summary = summarize_correlations(correlations, len(patterns))
    logger.info("repeatability over %d patterns: median r = %.4f", summary.n_patterns, summary.median)
    return RepeatabilityResult(patterns, correlations, summary, report)
