"""Train/test splitting, standardization, and per-module partitioning.

The split is stratified by label by default, with the test size rounded
half-up and apportioned across classes by largest remainder. Scaling
uses the population standard deviation, with zero-variance columns
assigned std 1. ``federated_fit_scaler`` reproduces the pooled scaler
from per-client first and second moments only, so no raw rows need to
leave a client; both routes agree to within floating-point error.
"""

import math
from dataclasses import dataclass

import numpy as np

from .dataset import LabeledDataset
from .errors import ConfigError, DatasetError, SplitError


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ScalerParams:
    mean: np.ndarray
    std: np.ndarray


@dataclass(frozen=True)
class SplitConfig:
    test_fraction: float = 0.2
    stratified: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise ConfigError(
                f"test_fraction must lie in (0, 1), got {self.test_fraction}"
            )


@dataclass
class ClientPartition:
    institution_id: str
    data: LabeledDataset
    n_k: int


def _apportion(total: int, class_sizes: dict) -> dict:
    """Largest-remainder apportionment of ``total`` across classes."""
    n = sum(class_sizes.values())
    quotas = {label: total * size / n for label, size in class_sizes.items()}
    counts = {label: int(math.floor(q)) for label, q in quotas.items()}
    leftover = total - sum(counts.values())
    by_remainder = sorted(
        class_sizes, key=lambda label: (-(quotas[label] - counts[label]), label)
    )
    for label in by_remainder[:leftover]:
        counts[label] += 1
    return counts


def split_train_test(ds: LabeledDataset, cfg: SplitConfig):
    """Split into (train, test) with |test| = round_half_up(f * N)."""
    n = len(ds)
    if n < 2:
        raise SplitError(f"need at least 2 rows to split, got {n}")
    n_test = round_half_up(cfg.test_fraction * n)
    rng = np.random.default_rng(cfg.seed)

    if cfg.stratified:
        labels, sizes = np.unique(ds.y, return_counts=True)
        class_sizes = {int(l): int(s) for l, s in zip(labels, sizes)}
        for label, size in class_sizes.items():
            if size < 2:
                raise SplitError(
                    f"stratified split impossible: class {label} has {size} row(s)"
                )
        per_class = _apportion(n_test, class_sizes)
        test_idx = []
        for label in sorted(class_sizes):
            members = np.nonzero(ds.y == label)[0]
            perm = rng.permutation(members.shape[0])
            test_idx.append(members[perm[: per_class[label]]])
        test_indices = np.sort(np.concatenate(test_idx))
    else:
        perm = rng.permutation(n)
        test_indices = np.sort(perm[:n_test])

    mask = np.zeros(n, dtype=bool)
    mask[test_indices] = True
    train_indices = np.nonzero(~mask)[0]
    return ds.subset(train_indices), ds.subset(test_indices)


def _moments_to_scaler(mean: np.ndarray, ex2: np.ndarray) -> ScalerParams:
    var = np.maximum(ex2 - mean * mean, 0.0)
    std = np.sqrt(var)
    std = np.where(std == 0.0, 1.0, std)
    return ScalerParams(mean=mean, std=std)


def fit_scaler(train: LabeledDataset) -> ScalerParams:
    """Per-column mean and population std; zero-variance columns get std 1."""
    if len(train) == 0:
        raise DatasetError("cannot fit a scaler on an empty dataset")
    mean = train.X.mean(axis=0)
    ex2 = (train.X * train.X).mean(axis=0)
    return _moments_to_scaler(mean, ex2)


def apply_scaler(params: ScalerParams, ds: LabeledDataset) -> LabeledDataset:
    """Elementwise (x - mean) / std; labels, keys, and row order unchanged."""
    if params.mean.shape[0] != ds.n_features:
        raise DatasetError(
            f"scaler has {params.mean.shape[0]} features, dataset has {ds.n_features}"
        )
    return LabeledDataset(
        feature_names=list(ds.feature_names),
        X=(ds.X - params.mean) / params.std,
        y=ds.y.copy(),
        keys=list(ds.keys),
    )


def partition_by_module(train: LabeledDataset) -> list:
    """One ClientPartition per distinct module code, ordered lexicographically."""
    by_module: dict = {}
    for i, key in enumerate(train.keys):
        by_module.setdefault(key.code_module, []).append(i)
    partitions = []
    for module in sorted(by_module):
        data = train.subset(np.asarray(by_module[module], dtype=np.int64))
        partitions.append(ClientPartition(institution_id=module, data=data, n_k=len(data)))
    return partitions


def federated_fit_scaler(partitions) -> ScalerParams:
    """Pooled scaler from per-client moments; no raw rows leave a client.

    Aggregates n_k-weighted means and second moments in partition order,
    then derives the population std exactly as ``fit_scaler`` does.
    """
    if not partitions:
        raise DatasetError("no partitions to fit a scaler on")
    total = sum(p.n_k for p in partitions)
    if total == 0:
        raise DatasetError("partitions contain no rows")
    d = partitions[0].data.n_features
    mean = np.zeros(d)
    ex2 = np.zeros(d)
    for part in partitions:
        if part.data.n_features != d:
            raise DatasetError("partitions disagree on feature count")
        if part.n_k == 0:
            continue
        X = part.data.X
        weight = part.n_k / total
        mean += weight * X.mean(axis=0)
        ex2 += weight * (X * X).mean(axis=0)
    return _moments_to_scaler(mean, ex2)
