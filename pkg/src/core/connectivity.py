"""
Functional Connectivity Inputs

Data model, preprocessing and file I/O for per-subject connectivity
matrices, plus a synthetic generator that stands in for real rfMRI
releases:
1. Fisher r-to-z transform and zero-mean/unit-variance normalization
2. Upper-triangle vectorization (row-major, i < j) and its inverse
3. Convex mixing of input vectors
4. Synthetic subjects: latent time series -> Pearson correlation matrix
5. CSV manifest + matrix files on disk
"""

import json
import logging
import math
import os
from dataclasses import asdict, dataclass
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from .errors import DatasetLoadError, DegenerateInputError, InvalidInputError
from .rng import make_rng

logger = logging.getLogger(__name__)

R_CLAMP = 1.0 - 1e-9
SYMMETRY_TOL = 1e-12
LOAD_SYMMETRY_TOL = 1e-9
PD_FLOOR = 1e-6
MANIFEST_COLUMNS = ["subject_id", "label", "matrix_file"]
DATASET_SIDECAR = "dataset.json"


@dataclass(frozen=True, eq=False)
class ConnectivityMatrix:
    """Symmetric n_nodes x n_nodes matrix (Pearson r before transform)."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1] or values.shape[0] < 2:
            raise InvalidInputError(f"connectivity matrix must be square n x n (n >= 2), got {values.shape}")
        gap = np.abs(values - values.T)
        if np.nanmax(gap) > SYMMETRY_TOL:
            i, j = np.unravel_index(np.nanargmax(gap), gap.shape)
            raise InvalidInputError(f"matrix not symmetric at cell ({i}, {j})")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    def __repr__(self):
        return f"ConnectivityMatrix(n_nodes={self.n_nodes})"


@dataclass(frozen=True, eq=False)
class SubjectRecord:
    """One labeled subject."""
    subject_id: str
    label: int
    matrix: ConnectivityMatrix

    def __post_init__(self):
        if self.label not in (0, 1):
            raise InvalidInputError(f"subject {self.subject_id}: label must be 0 or 1, got {self.label}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Labeled collection of subjects sharing one node count.

    Attributes:
        records: Subjects in a fixed order
        n_nodes: Matrix size of every record
        class_names: Names of class 0 and class 1
    """
    records: Tuple[SubjectRecord, ...]
    n_nodes: int
    class_names: Tuple[str, str] = ("M", "F")

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if len(self.class_names) != 2 or self.class_names[0] == self.class_names[1]:
            raise InvalidInputError(f"need two distinct class names, got {self.class_names}")
        for rec in self.records:
            if rec.matrix.n_nodes != self.n_nodes:
                raise InvalidInputError(
                    f"subject {rec.subject_id} has {rec.matrix.n_nodes} nodes, dataset has {self.n_nodes}"
                )
        present = {rec.label for rec in self.records}
        if present != {0, 1}:
            raise InvalidInputError(f"both classes must be present, found labels {sorted(present)}")

    def __len__(self):
        return len(self.records)

    @property
    def input_dim(self) -> int:
        return self.n_nodes * (self.n_nodes - 1) // 2

    @cached_property
    def labels(self) -> np.ndarray:
        labels = np.array([rec.label for rec in self.records], dtype=np.int64)
        labels.setflags(write=False)
        return labels

    @cached_property
    def features(self) -> np.ndarray:
        """Preprocessed (Fisher z + normalized) input vectors, one row per subject."""
        rows = np.stack([vectorize(preprocess(rec.matrix)) for rec in self.records])
        rows.setflags(write=False)
        return rows

    def raw_vectors(self) -> np.ndarray:
        """Untransformed upper-triangle correlation vectors."""
        return np.stack([vectorize(rec.matrix) for rec in self.records])

    def class_counts(self) -> Dict[str, int]:
        counts = np.bincount(self.labels, minlength=2)
        return {name: int(c) for name, c in zip(self.class_names, counts)}

    def subset(self, indices: Sequence[int]) -> "Dataset":
        """Dataset restricted to ``indices`` (order kept); preprocessed rows are reused."""
        idx = np.asarray(indices, dtype=np.int64)
        sub = Dataset(tuple(self.records[i] for i in idx), self.n_nodes, self.class_names)
        if "features" in self.__dict__:
            rows = self.features[idx]
            rows.setflags(write=False)
            sub.__dict__["features"] = rows
        return sub


@dataclass
class SyntheticConfig:
    """Knobs of the synthetic cohort generator."""
    n_subjects: int = 500
    n_nodes: int = 25
    n_timepoints: int = 200
    class_effect_size: float = 0.06
    n_effect_blocks: int = 4
    noise_sd: float = 0.3
    subject_variability: float = 0.1
    class_names: Tuple[str, str] = ("M", "F")

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["class_names"] = list(self.class_names)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "SyntheticConfig":
        data = dict(data)
        if "class_names" in data:
            data["class_names"] = tuple(data["class_names"])
        return cls(**data)


def fisher_z(m: ConnectivityMatrix) -> ConnectivityMatrix:
    """
    Fisher r-to-z transform of the off-diagonal entries.

    |r| is clamped at 1 - 1e-9 before atanh; the diagonal is set to 0.

    Args:
        m: Raw Pearson correlation matrix

    Returns:
        Transformed matrix
    """
    values = m.values
    bad = ~np.isfinite(values)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise InvalidInputError(f"non-finite entry at cell ({i}, {j}): {values[i, j]}")
    off = ~np.eye(m.n_nodes, dtype=bool)
    out_of_range = off & (np.abs(values) > 1.0 + LOAD_SYMMETRY_TOL)
    if out_of_range.any():
        i, j = np.argwhere(out_of_range)[0]
        raise InvalidInputError(f"|r| > 1 at cell ({i}, {j}): {values[i, j]}")
    z = np.arctanh(np.clip(values, -R_CLAMP, R_CLAMP))
    np.fill_diagonal(z, 0.0)
    return ConnectivityMatrix(z)


def normalize(m: ConnectivityMatrix) -> ConnectivityMatrix:
    """
    Zero mean, unit population variance over the upper-triangle entries.

    Raises:
        DegenerateInputError: if the off-diagonal entries have no variance
    """
    v = vectorize(m)
    mean = v.mean()
    std = v.std()
    if not np.isfinite(std) or std <= 1e-12 * max(1.0, abs(mean)):
        raise DegenerateInputError("off-diagonal entries have zero variance; cannot normalize")
    return ConnectivityMatrix(devectorize((v - mean) / std, m.n_nodes))


def preprocess(m: ConnectivityMatrix) -> ConnectivityMatrix:
    """Fisher z followed by normalization (the model input transform)."""
    return normalize(fisher_z(m))


def vectorize(m: ConnectivityMatrix) -> np.ndarray:
    """Upper-triangle off-diagonal entries, row-major (i < j)."""
    iu, ju = np.triu_indices(m.n_nodes, k=1)
    return m.values[iu, ju].copy()


def n_nodes_for(length: int) -> int:
    """Node count n with n(n-1)/2 == length."""
    n = int(round((1 + math.sqrt(1 + 8 * length)) / 2))
    if n * (n - 1) // 2 != length or n < 2:
        raise InvalidInputError(f"length {length} is not n(n-1)/2 for any n >= 2")
    return n


def devectorize(v: np.ndarray, n_nodes: Optional[int] = None, diagonal: float = 0.0) -> np.ndarray:
    """
    Rebuild the symmetric matrix from its upper-triangle vector.

    Args:
        v: Vector in ``vectorize`` order
        n_nodes: Node count (inferred from the length if None)
        diagonal: Value written on the diagonal

    Returns:
        Symmetric n x n array
    """
    v = np.asarray(v, dtype=np.float64)
    n = n_nodes_for(v.size) if n_nodes is None else n_nodes
    if v.size != n * (n - 1) // 2:
        raise InvalidInputError(f"vector of length {v.size} does not fit {n} nodes")
    out = np.full((n, n), 0.0)
    iu, ju = np.triu_indices(n, k=1)
    out[iu, ju] = v
    out[ju, iu] = v
    np.fill_diagonal(out, diagonal)
    return out


def mix(a: np.ndarray, b: np.ndarray, alpha: float) -> np.ndarray:
    """Elementwise alpha * a + (1 - alpha) * b."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError(f"alpha must lie in [0, 1], got {alpha}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"cannot mix vectors of shapes {a.shape} and {b.shape}")
    return alpha * a + (1.0 - alpha) * b


def _nearest_pd(cov: np.ndarray, context: str) -> np.ndarray:
    """Clip eigenvalues at PD_FLOOR; returns a symmetric square-root factor."""
    w, v = linalg.eigh(cov)
    if w.min() < PD_FLOOR:
        logger.warning(
            "%s: covariance not positive definite (min eigenvalue %.3g), clipping at %g",
            context, w.min(), PD_FLOOR,
        )
        w = np.maximum(w, PD_FLOOR)
    return v * np.sqrt(w)


def _effect_blocks(rng: np.random.Generator, n_nodes: int, n_blocks: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Class-independent and class-signed parts of the block effect.

    Each block joins a row node set a and a column node set b with a random
    sign s. Class t (+1 or -1) receives sum (a + t s b)(a + t s b)^T, which
    splits into ``common`` (aa^T + bb^T) plus t times ``cross`` (s(ab^T + ba^T)).
    Only the cross blocks differ between the classes.
    """
    common = np.zeros((n_nodes, n_nodes))
    cross = np.zeros((n_nodes, n_nodes))
    size = max(2, n_nodes // 8)
    for _ in range(n_blocks):
        nodes = rng.choice(n_nodes, size=min(2 * size, n_nodes), replace=False)
        a, b = np.zeros(n_nodes), np.zeros(n_nodes)
        a[nodes[: len(nodes) // 2]] = 1.0
        b[nodes[len(nodes) // 2:]] = 1.0
        sign = rng.choice([-1.0, 1.0])
        common += np.outer(a, a) + np.outer(b, b)
        cross += sign * (np.outer(a, b) + np.outer(b, a))
    return common, cross


def generate_synthetic(cfg: SyntheticConfig, seed: int) -> Dataset:
    """
    Draw a balanced synthetic cohort.

    Each subject gets a latent multivariate time series whose covariance is
    a shared factor-model base, a subject-specific loading jitter, and a
    rank-one term per effect block whose cross entries are +-effect/2
    depending on the class. The base is positive definite and the block
    terms are PSD, so eigenvalue clipping only happens for negative effects. Gaussian
    observation noise is added and the Pearson matrix is returned.

    Args:
        cfg: Generator configuration
        seed: Seed; identical seeds give bit-identical datasets

    Returns:
        Dataset with labels split evenly between the two classes
    """
    if cfg.n_subjects < 4 or cfg.n_subjects % 2:
        raise InvalidInputError(f"n_subjects must be even and >= 4, got {cfg.n_subjects}")
    if cfg.n_nodes < 3:
        raise InvalidInputError(f"n_nodes must be >= 3, got {cfg.n_nodes}")
    if cfg.n_timepoints < 3:
        raise InvalidInputError(f"n_timepoints must be >= 3, got {cfg.n_timepoints}")
    if cfg.n_timepoints <= cfg.n_nodes:
        logger.warning("n_timepoints (%d) <= n_nodes (%d): correlation estimates will be poor",
                       cfg.n_timepoints, cfg.n_nodes)

    rng = make_rng(seed)
    n = cfg.n_nodes
    k = max(2, n // 5)
    loadings = rng.normal(size=(n, k))
    common, cross = _effect_blocks(rng, n, cfg.n_effect_blocks)
    labels = np.repeat([0, 1], cfg.n_subjects // 2)
    labels = labels[rng.permutation(cfg.n_subjects)]

    records = []
    for s, label in enumerate(labels):
        subject_loadings = loadings + cfg.subject_variability * rng.normal(size=(n, k))
        # rows scaled so the shared part contributes 0.5 to every variance
        subject_loadings *= np.sqrt(0.5 / np.sum(subject_loadings ** 2, axis=1, keepdims=True))
        cov = subject_loadings @ subject_loadings.T + 0.5 * np.eye(n)
        sign = 1.0 if label == 1 else -1.0
        # PSD for effect >= 0
        cov = cov + 0.5 * cfg.class_effect_size * (common + sign * cross)
        factor = _nearest_pd(cov, f"subject {s}")
        series = rng.normal(size=(cfg.n_timepoints, n)) @ factor.T
        series += cfg.noise_sd * rng.normal(size=series.shape)
        r = np.corrcoef(series, rowvar=False)
        r = np.clip(0.5 * (r + r.T), -1.0, 1.0)
        np.fill_diagonal(r, 1.0)
        records.append(SubjectRecord(f"sub-{s:04d}", int(label), ConnectivityMatrix(r)))

    logger.info("generated %d synthetic subjects (%d nodes, effect %.3g)",
                cfg.n_subjects, n, cfg.class_effect_size)
    return Dataset(tuple(records), n, tuple(cfg.class_names))


def save_dataset(data: Dataset, directory: str) -> str:
    """
    Write ``manifest.csv``, one CSV per matrix and a ``dataset.json`` sidecar.

    Returns:
        Path of the manifest
    """
    matrix_dir = os.path.join(directory, "matrices")
    os.makedirs(matrix_dir, exist_ok=True)
    rows = []
    for rec in data.records:
        rel = os.path.join("matrices", f"{rec.subject_id}.csv")
        np.savetxt(os.path.join(directory, rel), rec.matrix.values, fmt="%.17g", delimiter=",")
        rows.append({"subject_id": rec.subject_id, "label": data.class_names[rec.label], "matrix_file": rel})
    manifest = os.path.join(directory, "manifest.csv")
    pd.DataFrame(rows, columns=MANIFEST_COLUMNS).to_csv(manifest, index=False, lineterminator="\n")
    with open(os.path.join(directory, DATASET_SIDECAR), "w", encoding="utf-8") as f:
        json.dump({"n_nodes": data.n_nodes, "class_names": list(data.class_names)}, f, indent=2)
        f.write("\n")
    return manifest


def _read_matrix(path: str) -> np.ndarray:
    try:
        values = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except (OSError, ValueError) as e:
        raise DatasetLoadError(f"{path}: cannot read matrix: {e}") from e
    if values.shape[0] != values.shape[1]:
        raise DatasetLoadError(f"{path}: matrix is {values.shape[0]}x{values.shape[1]}, expected square")
    gap = np.abs(values - values.T)
    if np.nanmax(gap) > LOAD_SYMMETRY_TOL:
        i, j = np.unravel_index(np.nanargmax(gap), gap.shape)
        raise DatasetLoadError(f"{path}:{i + 1}: matrix asymmetric at column {j + 1} (|diff| = {gap[i, j]:.3g})")
    return 0.5 * (values + values.T)


def load_dataset(manifest_path: str, class_names: Optional[Sequence[str]] = None) -> Dataset:
    """
    Load a dataset from its manifest.

    Class names come from the argument, else from ``dataset.json`` next to
    the manifest, else from the sorted distinct label strings.

    Raises:
        DatasetLoadError: with the offending file and line
    """
    base = os.path.dirname(os.path.abspath(manifest_path))
    try:
        manifest = pd.read_csv(manifest_path, dtype=str, keep_default_na=False)
    except FileNotFoundError as e:
        raise DatasetLoadError(f"{manifest_path}: manifest not found") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DatasetLoadError(f"{manifest_path}: no records ({e})") from e
    missing = [c for c in MANIFEST_COLUMNS if c not in manifest.columns]
    if missing:
        raise DatasetLoadError(f"{manifest_path}:1: missing columns {missing}")
    if manifest.empty:
        raise DatasetLoadError(f"{manifest_path}: no records")

    if class_names is None:
        sidecar = os.path.join(base, DATASET_SIDECAR)
        if os.path.exists(sidecar):
            try:
                with open(sidecar, encoding="utf-8") as f:
                    class_names = json.load(f)["class_names"]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise DatasetLoadError(f"{sidecar}: no usable class_names ({type(e).__name__}: {e})") from e
        else:
            class_names = sorted(manifest["label"].unique())
    class_names = tuple(class_names)
    if len(class_names) != 2:
        raise DatasetLoadError(f"{manifest_path}: need exactly two class names, got {list(class_names)}")
    label_index = {name: i for i, name in enumerate(class_names)}

    records: List[SubjectRecord] = []
    n_nodes = None
    for row_no, row in enumerate(manifest.itertuples(index=False), start=2):
        where = f"{manifest_path}:{row_no}"
        if row.label not in label_index:
            raise DatasetLoadError(f"{where}: unknown label {row.label!r} (classes {list(class_names)})")
        path = row.matrix_file if os.path.isabs(row.matrix_file) else os.path.join(base, row.matrix_file)
        if not os.path.exists(path):
            raise DatasetLoadError(f"{where}: matrix file not found: {row.matrix_file}")
        values = _read_matrix(path)
        if n_nodes is None:
            n_nodes = values.shape[0]
        elif values.shape[0] != n_nodes:
            raise DatasetLoadError(f"{where}: {values.shape[0]} nodes, expected {n_nodes}")
        try:
            matrix = ConnectivityMatrix(values)
        except InvalidInputError as e:
            raise DatasetLoadError(f"{where}: {e}") from e
        records.append(SubjectRecord(row.subject_id, label_index[row.label], matrix))

    try:
        return Dataset(tuple(records), n_nodes, class_names)
    except InvalidInputError as e:
        raise DatasetLoadError(f"{manifest_path}: {e}") from e
