"""SMOTE minority oversampling for one client's local training data.

Synthetic rows interpolate between a minority row and one of its k
nearest minority neighbors (Euclidean distance, ties broken by lower
row index): x + u * (x_nn - x) with u ~ Uniform[0, 1). Parents are
visited round-robin; the neighbor index and u are drawn fresh per
synthetic row, in that order, from the configured seed. Each synthetic
coordinate is pinned inside its parents' bounds, original rows are
untouched, and synthetic rows carry negative student ids with the
reserved "synthetic" presentation.

Run this on standardized features: Euclidean neighborhoods are not
meaningful across raw feature magnitudes.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dataset import LabeledDataset, RegistrationKey
from .errors import ConfigError, DatasetError

logger = logging.getLogger(__name__)

SYNTHETIC_PRESENTATION = "synthetic"


@dataclass(frozen=True)
class SmoteConfig:
    k_neighbors: int = 5
    target_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ConfigError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if not 0 < self.target_ratio <= 1:
            raise ConfigError(
                f"target_ratio must lie in (0, 1], got {self.target_ratio}"
            )


def is_synthetic_key(key: RegistrationKey) -> bool:
    return key.id_student < 0 or key.code_presentation == SYNTHETIC_PRESENTATION


def _class_split(y: np.ndarray):
    """Return (minority_label, minority_indices, majority_count).

    With equal counts there is no minority; returns (None, ..., ...).
    """
    labels, counts = np.unique(y, return_counts=True)
    if labels.shape[0] < 2 or counts[0] == counts[1]:
        return None, None, None
    minority_pos = int(np.argmin(counts))
    minority_label = int(labels[minority_pos])
    minority_idx = np.nonzero(y == minority_label)[0]
    majority_count = int(counts.max())
    return minority_label, minority_idx, majority_count


def is_imbalanced(y, target_ratio: float = 1.0) -> bool:
    """True iff minority/majority falls below the balancing target."""
    y = np.asarray(y)
    minority_label, minority_idx, majority_count = _class_split(y)
    if minority_label is None:
        return False
    return minority_idx.shape[0] / majority_count < target_ratio


def _neighbor_lists(X_min: np.ndarray, k: int) -> np.ndarray:
    """k nearest minority neighbors per minority row, self excluded.

    Ties resolve to the lower row index via a stable sort over distances.
    """
    dists = _kernels.pairwise_sq_dists(X_min, X_min)
    n = X_min.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        order = np.argsort(dists[i], kind="stable")
        out[i] = order[order != i][:k]
    return out


def knn_minority(ds: LabeledDataset, query_index: int, k: int) -> list:
    """Indices of the k nearest minority rows to a minority query row."""
    y = np.asarray(ds.y)
    minority_label, minority_idx, _ = _class_split(y)
    if minority_label is None or y[query_index] != minority_label:
        raise DatasetError(f"row {query_index} is not a minority-class row")
    X_min = ds.X[minority_idx]
    pos = int(np.nonzero(minority_idx == query_index)[0][0])
    dists = _kernels.pairwise_sq_dists(X_min[pos : pos + 1], X_min)[0]
    order = np.argsort(dists, kind="stable")
    order = order[order != pos]
    return [int(minority_idx[j]) for j in order[:k]]


def smote_oversample(ds: LabeledDataset, cfg: SmoteConfig) -> LabeledDataset:
    """Append synthetic minority rows until minority = floor(ratio * majority).

    Already-balanced input is returned unchanged. With a single minority
    row interpolation is undefined, so balancing is skipped with a
    warning. k shrinks to minority_count - 1 when the class is small.
    """
    y = np.asarray(ds.y)
    minority_label, minority_idx, majority_count = _class_split(y)
    if minority_label is None:
        return ds
    n_min = minority_idx.shape[0]
    n_synthetic = int(np.floor(cfg.target_ratio * majority_count)) - n_min
    if n_synthetic <= 0:
        return ds
    if n_min < 2:
        logger.warning(
            "smote_oversample: only %d minority row(s); skipping oversampling", n_min
        )
        return ds

    k = min(cfg.k_neighbors, n_min - 1)
    X_min = np.ascontiguousarray(ds.X[minority_idx])
    neighbors = _neighbor_lists(X_min, k)

    rng = np.random.default_rng(cfg.seed)
    synthetic = np.empty((n_synthetic, ds.n_features))
    keys = list(ds.keys)
    for s in range(n_synthetic):
        i = s % n_min
        nb = neighbors[i, int(rng.integers(0, k))]
        u = rng.random()
        parent = X_min[i]
        other = X_min[nb]
        row = parent + u * (other - parent)
        synthetic[s] = np.minimum(
            np.maximum(row, np.minimum(parent, other)), np.maximum(parent, other)
        )
        parent_key = ds.keys[minority_idx[i]]
        keys.append(
            RegistrationKey(-(s + 1), parent_key.code_module, SYNTHETIC_PRESENTATION)
        )

    return LabeledDataset(
        feature_names=list(ds.feature_names),
        X=np.vstack([ds.X, synthetic]),
        y=np.concatenate([ds.y, np.full(n_synthetic, minority_label, dtype=ds.y.dtype)]),
        keys=keys,
    )
