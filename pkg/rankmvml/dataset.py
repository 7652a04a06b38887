"""Multi-view multi-label data model, incompleteness injection and label graphs."""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ArtifactIOError, ContractError, ManifestError
from .ndcore import EPS, Matrix, RngStream, as_matrix
from .utils import (
    _validate_binary,
    _validate_rate,
    read_json,
    read_matrix_csv,
    write_json,
    write_matrix_csv,
)

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
TRAIN_FRACTION = 0.70
VAL_FRACTION = 0.15


# =============================================================================
# DATA MODEL
# =============================================================================


@dataclass(frozen=True)
class MultiViewDataset:
    """n samples seen through m views, with c partially known labels.

    ``view_mask`` (W) marks observed views, ``label_mask`` (G) marks known
    labels; ``labels`` (Y) is zero wherever G is zero.
    """

    views: Tuple[Matrix, ...]
    labels: Matrix
    view_mask: Matrix
    label_mask: Matrix
    split: np.ndarray
    seed: int = 0

    def __post_init__(self):
        views = tuple(as_matrix(v, "view").copy() for v in self.views)
        object.__setattr__(self, "views", views)
        for name in ("labels", "view_mask", "label_mask"):
            object.__setattr__(self, name, as_matrix(getattr(self, name), name).copy())
        object.__setattr__(self, "split", np.array(self.split, dtype=object))
        errors = self._validate()
        if errors:
            raise ContractError("; ".join(errors))
        for array in (*self.views, self.labels, self.view_mask, self.label_mask):
            array.setflags(write=False)
        self.split.setflags(write=False)

    def _validate(self) -> List[str]:
        errors = []
        if not self.views:
            return ["dataset needs at least one view"]
        n = self.n
        for v, x in enumerate(self.views):
            if x.shape[0] != n:
                errors.append(f"view {v} has {x.shape[0]} rows, expected {n}")
            if not np.all(np.isfinite(x)):
                errors.append(f"view {v} contains non-finite values")
        if self.view_mask.shape != (n, self.m):
            errors.append(f"W has shape {self.view_mask.shape}, expected {(n, self.m)}")
        if self.label_mask.shape != self.labels.shape:
            errors.append(
                f"G has shape {self.label_mask.shape}, Y has {self.labels.shape}"
            )
        named = (("Y", self.labels), ("W", self.view_mask), ("G", self.label_mask))
        for name, matrix in named:
            message = _validate_binary(matrix, name)
            if message:
                errors.append(message)
        if errors:
            return errors
        if n and np.any(self.view_mask.sum(axis=1) < 1):
            errors.append("every sample needs at least one available view")
        if np.any(self.labels * (1.0 - self.label_mask) != 0):
            errors.append("Y must be zero wherever G is zero")
        if self.split.shape != (n,):
            errors.append(f"split has {self.split.shape[0]} tags, expected {n}")
        elif not set(self.split.tolist()) <= set(SPLITS):
            errors.append(f"split tags must be one of {SPLITS}")
        return errors

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def m(self) -> int:
        return len(self.views)

    @property
    def c(self) -> int:
        return self.labels.shape[1]

    @property
    def dims(self) -> List[int]:
        return [x.shape[1] for x in self.views]

    def rows(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise ContractError(f"Unknown split '{split}'; use one of {SPLITS}")
        return np.flatnonzero(self.split == split)

    def subset(self, rows: np.ndarray) -> "MultiViewDataset":
        rows = np.asarray(rows, dtype=int)
        return MultiViewDataset(
            views=tuple(x[rows] for x in self.views),
            labels=self.labels[rows],
            view_mask=self.view_mask[rows],
            label_mask=self.label_mask[rows],
            split=self.split[rows],
            seed=self.seed,
        )

    def equals(self, other: "MultiViewDataset") -> bool:
        return (
            self.m == other.m
            and all(np.array_equal(a, b) for a, b in zip(self.views, other.views))
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.view_mask, other.view_mask)
            and np.array_equal(self.label_mask, other.label_mask)
            and list(self.split) == list(other.split)
        )


@dataclass(frozen=True)
class InjectionConfig:
    """Missing-view and missing-label rates of the incompleteness protocol."""

    view_missing_rate: float = 0.5
    label_missing_rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        errors = [
            msg
            for msg in (
                _validate_rate(self.view_missing_rate, "view_missing_rate"),
                _validate_rate(self.label_missing_rate, "label_missing_rate"),
            )
            if msg
        ]
        if errors:
            raise ContractError("; ".join(errors))


@dataclass(frozen=True)
class LabelCorrelation:
    """Conditional label-dependence matrix C and its truncated form."""

    matrix: Matrix
    truncated: Matrix
    sigma: float

    @classmethod
    def from_labels(
        cls, labels: Matrix, label_mask: Matrix, sigma: float
    ) -> "LabelCorrelation":
        full = build_correlation(labels, label_mask)
        truncated = truncate_correlation(full, sigma)
        return cls(matrix=full, truncated=truncated, sigma=sigma)


# =============================================================================
# SYNTHESIS AND SPLITS
# =============================================================================


def assign_splits(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random 70/15/15 train/val/test tags."""
    n_train = int(round(TRAIN_FRACTION * n))
    n_val = int(round(VAL_FRACTION * n))
    tags = np.empty(n, dtype=object)
    order = rng.permutation(n)
    tags[order[:n_train]] = "train"
    tags[order[n_train : n_train + n_val]] = "val"
    tags[order[n_train + n_val :]] = "test"
    return tags


def synth_dataset(
    n: int,
    m: int,
    c: int,
    dims: Optional[Sequence[int]] = None,
    noise: float = 0.1,
    seed: int = 0,
    latent_dim: Optional[int] = None,
) -> MultiViewDataset:
    """Generate a complete multi-view multi-label dataset.

    Each sample draws 1-3 positive labels; its latent code is the sum of the
    positive label prototypes. View v is a fixed random linear map of that code
    plus Gaussian noise with standard deviation ``noise``.
    """
    if n < 4 or m < 1 or c < 2:
        raise ContractError(
            f"synth_dataset needs n >= 4, m >= 1, c >= 2 (got n={n}, m={m}, c={c})"
        )
    dims = list(dims) if dims is not None else [max(2 * c, 16)] * m
    if len(dims) != m or any(d < 1 for d in dims):
        raise ContractError(f"dims must list {m} positive widths, got {dims}")
    if noise < 0:
        raise ContractError(f"noise must be non-negative, got {noise}")
    latent_dim = latent_dim or max(c, 8)

    stream = RngStream(seed)
    rng = stream.child("synth").generator()
    prototypes = rng.standard_normal((c, latent_dim))

    labels = np.zeros((n, c))
    max_positive = min(3, c)
    for i in range(n):
        k = rng.integers(1, max_positive + 1)
        labels[i, rng.choice(c, size=k, replace=False)] = 1.0
    latent = labels @ prototypes

    views = []
    for d in dims:
        projection = rng.standard_normal((latent_dim, d)) / np.sqrt(latent_dim)
        views.append(latent @ projection + noise * rng.standard_normal((n, d)))

    split = assign_splits(n, stream.child("split").generator())
    logger.info(
        f"Synthesized dataset n={n} m={m} c={c} dims={dims} noise={noise} seed={seed}"
    )
    return MultiViewDataset(
        views=tuple(views),
        labels=labels,
        view_mask=np.ones((n, m)),
        label_mask=np.ones((n, c)),
        split=split,
        seed=seed,
    )


# =============================================================================
# INCOMPLETENESS INJECTION
# =============================================================================


def inject_missing(ds: MultiViewDataset, cfg: InjectionConfig) -> MultiViewDataset:
    """Hide views and training labels following the incompleteness protocol.

    Views: per view, a ``view_missing_rate`` fraction of all samples loses it;
    samples left with no view get one uniformly chosen view back. Missing view
    rows are refilled with standard normal noise.

    Labels: per class, on training rows only, a ``label_missing_rate`` fraction
    of the known positives and of the known negatives is hidden (G=0, Y=0).
    Validation and test labels stay complete.
    """
    if not np.all(ds.view_mask == 1) or not np.all(ds.label_mask == 1):
        raise ContractError("inject_missing expects a dataset with complete W and G")
    stream = RngStream(cfg.seed)
    n, m = ds.n, ds.m

    view_mask = np.ones((n, m))
    rng = stream.child("views").generator()
    n_drop = int(round(cfg.view_missing_rate * n))
    if n_drop:
        for v in range(m):
            view_mask[rng.choice(n, size=n_drop, replace=False), v] = 0.0
        empty = np.flatnonzero(view_mask.sum(axis=1) == 0)
        for i in empty:
            view_mask[i, rng.integers(m)] = 1.0
        logger.debug(f"Restored one view on {len(empty)} samples left without any view")

    labels = ds.labels.copy()
    label_mask = np.ones_like(labels)
    train = ds.rows("train")
    rng = stream.child("labels").generator()
    if cfg.label_missing_rate > 0 and len(train):
        for j in range(ds.c):
            column = labels[train, j]
            for value in (1.0, 0.0):
                candidates = train[column == value]
                n_hide = int(round(cfg.label_missing_rate * len(candidates)))
                if n_hide:
                    hidden = rng.choice(candidates, size=n_hide, replace=False)
                    label_mask[hidden, j] = 0.0
    labels *= label_mask

    views = []
    rng = stream.child("noise").generator()
    for v, x in enumerate(ds.views):
        missing = view_mask[:, v] == 0
        if missing.any():
            x = x.copy()
            x[missing] = rng.standard_normal((int(missing.sum()), x.shape[1]))
        views.append(x)

    logger.info(
        f"Injected incompleteness: W density {view_mask.mean():.3f}, "
        f"G density on train {label_mask[train].mean() if len(train) else 1.0:.3f}"
    )
    return replace(
        ds,
        views=tuple(views),
        labels=labels,
        view_mask=view_mask,
        label_mask=label_mask,
    )


# =============================================================================
# LABEL CORRELATION
# =============================================================================


def build_correlation(labels: Matrix, label_mask: Optional[Matrix] = None) -> Matrix:
    """C[i, j] = P(label j | label i) estimated from zero-filled labels.

    A label that never occurs gets the unit row e_i.
    """
    y = as_matrix(labels, "labels")
    co_occurrence = y.T @ y
    counts = np.diag(co_occurrence).copy()
    c = y.shape[1]
    corr = np.eye(c)
    present = counts > 0
    corr[present] = co_occurrence[present] / counts[present, None]
    return corr


def truncate_correlation(corr: Matrix, sigma: float) -> Matrix:
    """Keep entries strictly above ``sigma``, zero the rest."""
    if not 0.0 <= sigma <= 1.0:
        raise ContractError(f"sigma must lie in [0, 1], got {sigma}")
    corr = as_matrix(corr, "correlation")
    return np.where(corr > sigma, corr, 0.0)


def correlation_for(ds: MultiViewDataset, sigma: float) -> LabelCorrelation:
    """Correlation built from training rows only."""
    train = ds.rows("train")
    if len(train) == 0:
        raise ContractError("Cannot build label correlation: training split is empty")
    return LabelCorrelation.from_labels(ds.labels[train], ds.label_mask[train], sigma)


def label_similarity_graph(labels: Matrix, label_mask: Matrix) -> Tuple[Matrix, Matrix]:
    """Pairwise label agreement L = (Y Y^T) / (G G^T) within a batch.

    Returns:
        (L, valid): ``valid`` is 0 where G G^T is zero; L is 0 there too.
    """
    y = as_matrix(labels, "labels")
    g = as_matrix(label_mask, "label_mask")
    shared = y @ y.T
    known = g @ g.T
    valid = (known > 0).astype(np.float64)
    graph = np.where(known > 0, shared / np.maximum(known, EPS), 0.0)
    return graph, valid


def correlation_subset(
    corr: Matrix, label_subset: Optional[Sequence[int]] = None
) -> Tuple[Matrix, List[int]]:
    """Square sub-matrix of ``corr`` over ``label_subset`` (all labels if None)."""
    corr = as_matrix(corr, "correlation")
    c = corr.shape[0]
    subset = list(range(c)) if label_subset is None else [int(j) for j in label_subset]
    bad = [j for j in subset if not 0 <= j < c]
    if bad:
        raise ContractError(f"Label indices {bad} out of range for {c} labels")
    return corr[np.ix_(subset, subset)], subset


def export_correlation_csv(
    corr: Matrix, path: Union[str, Path], label_subset: Optional[Sequence[int]] = None
) -> Path:
    """Write (a square subset of) C as CSV with a header row of label indices."""
    sub, subset = correlation_subset(corr, label_subset)
    return write_matrix_csv(sub, path, header=[str(j) for j in subset])


# =============================================================================
# ON-DISK FORMAT
# =============================================================================


def _manifest_for(ds: MultiViewDataset) -> Dict:
    return {
        "n": ds.n,
        "m": ds.m,
        "c": ds.c,
        "view_dims": ds.dims,
        "seed": int(ds.seed),
        "files": _default_files(ds.m),
    }


def save_dataset(ds: MultiViewDataset, directory: Union[str, Path]) -> Path:
    """Write ``manifest.json`` plus headerless CSV matrices into ``directory``."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ArtifactIOError(directory, "cannot create dataset directory", e)
    manifest = _manifest_for(ds)
    files = manifest["files"]
    for v, x in enumerate(ds.views):
        write_matrix_csv(x, directory / files["views"][v])
    write_matrix_csv(ds.labels, directory / files["labels"], integer=True)
    write_matrix_csv(ds.view_mask, directory / files["view_mask"], integer=True)
    write_matrix_csv(ds.label_mask, directory / files["label_mask"], integer=True)
    split_path = directory / files["split"]
    try:
        split_path.write_text("".join(f"{tag}\n" for tag in ds.split))
    except OSError as e:
        raise ArtifactIOError(split_path, "cannot write split tags", e)
    write_json(manifest, directory / "manifest.json")
    logger.info(f"Saved dataset (n={ds.n}, m={ds.m}, c={ds.c}) to {directory}")
    return directory


def _manifest_int(manifest: Dict, key: str, path: Path) -> int:
    value = manifest.get(key)
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ManifestError(path, key, f"must be a non-negative integer, got {value!r}")
    return value


def load_dataset(directory: Union[str, Path]) -> MultiViewDataset:
    """Read a dataset written by :func:`save_dataset` (or prepared externally)."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    manifest = read_json(manifest_path)
    if not isinstance(manifest, dict):
        raise ManifestError(manifest_path, "<root>", "must be a JSON object")
    n = _manifest_int(manifest, "n", manifest_path)
    m = _manifest_int(manifest, "m", manifest_path)
    c = _manifest_int(manifest, "c", manifest_path)
    dims = manifest.get("view_dims")
    dims_ok = isinstance(dims, list) and len(dims) == m
    if not dims_ok or not all(isinstance(d, int) and d > 0 for d in dims):
        reason = f"must list {m} positive integers"
        raise ManifestError(manifest_path, "view_dims", reason)
    seed = manifest.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ManifestError(manifest_path, "seed", f"must be an integer, got {seed!r}")
    files = manifest.get("files", _default_files(m))
    view_files = files.get("views") if isinstance(files, dict) else None
    if not isinstance(view_files, list) or len(view_files) != m:
        raise ManifestError(manifest_path, "files", f"must name {m} view files")

    views = []
    for v, name in enumerate(files["views"]):
        x = read_matrix_csv(directory / name, rows=n, cols=dims[v])
        views.append(x)
    labels = read_matrix_csv(directory / files.get("labels", "Y.csv"), rows=n, cols=c)
    view_mask = read_matrix_csv(
        directory / files.get("view_mask", "W.csv"), rows=n, cols=m
    )
    label_mask = read_matrix_csv(
        directory / files.get("label_mask", "G.csv"), rows=n, cols=c
    )
    split_path = directory / files.get("split", "split.csv")
    try:
        lines = split_path.read_text().splitlines()
        split = [line.strip() for line in lines if line.strip()]
    except OSError as e:
        raise ArtifactIOError(split_path, "cannot read split tags", e)
    if len(split) != n:
        reason = f"is {n} but {split_path.name} has {len(split)} tags"
        raise ManifestError(manifest_path, "n", reason)
    logger.debug(f"Loaded dataset (n={n}, m={m}, c={c}) from {directory}")
    return MultiViewDataset(
        views=tuple(views),
        labels=labels,
        view_mask=view_mask,
        label_mask=label_mask,
        split=np.array(split, dtype=object),
        seed=seed,
    )


def _default_files(m: int) -> Dict:
    return {
        "views": [f"view_{v}.csv" for v in range(m)],
        "labels": "Y.csv",
        "view_mask": "W.csv",
        "label_mask": "G.csv",
        "split": "split.csv",
    }
