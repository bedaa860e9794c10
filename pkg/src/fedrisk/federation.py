"""Synchronous FedAvg orchestration with per-round centralized evaluation.

Each round: select institutions, run every selected institution's local
update from the same global snapshot, aggregate the returned parameter
vectors weighted by sample count, and evaluate the new global model on
the held-out test set. Per-round, per-institution RNG streams are
derived from (seed, round, institution), so results are independent of
execution order; aggregation accumulates in lexicographic institution
order for floating-point determinism.

Local logistic-regression updates balance their data with SMOTE first
when a SMOTE config is present and the partition is imbalanced; the MLP
never oversamples. Aggregation weights use the pre-SMOTE sample count
unless ``post_smote_weighting`` is set.
"""

import csv
from dataclasses import dataclass, replace

import numpy as np

from . import balance, metrics, models
from .dataset import LabeledDataset
from .errors import ConfigError, DatasetError, FedriskError, LayoutError
from .preprocess import round_half_up
from .seeding import derive_seed


@dataclass(frozen=True)
class FederationConfig:
    model_family: str
    local_train: models.TrainConfig
    rounds: int = 20
    participation_fraction: float = 1.0
    smote: balance.SmoteConfig | None = None
    seed: int = 0
    threshold: float = 0.5
    post_smote_weighting: bool = False

    def __post_init__(self):
        if self.model_family not in ("lr", "mlp"):
            raise ConfigError(f"model_family must be 'lr' or 'mlp', got {self.model_family!r}")
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if not 0 < self.participation_fraction <= 1:
            raise ConfigError(
                f"participation_fraction must lie in (0, 1], got {self.participation_fraction}"
            )


@dataclass(frozen=True)
class RoundResult:
    round: int
    global_params: models.ParamVector
    metrics: metrics.MetricBundle
    participating: tuple


def select_institutions(all_ids, participation_fraction: float, round_rng) -> list:
    """Sample max(1, round_half_up(C * n)) ids without replacement, sorted."""
    ids = sorted(all_ids)
    if not ids:
        raise DatasetError("no institutions to select from")
    k = max(1, round_half_up(participation_fraction * len(ids)))
    if k >= len(ids):
        return ids
    chosen = round_rng.choice(len(ids), size=k, replace=False)
    return sorted(ids[i] for i in chosen)


def local_seeds(cfg: FederationConfig, round_index: int, institution_id: str):
    """(shuffle_seed, smote_seed) for one institution in one round."""
    return (
        derive_seed(cfg.seed, "round", round_index, "institution", institution_id, "shuffle"),
        derive_seed(cfg.seed, "round", round_index, "institution", institution_id, "smote"),
    )


def institution_update(partition, global_params: models.ParamVector, cfg: FederationConfig, round_index: int = 1):
    """One institution's local update; returns (n_k, updated params).

    SMOTE (LR only) is re-applied fresh each round with a round-derived
    seed; n_k stays the original pre-SMOTE count.
    """
    shuffle_seed, smote_seed = local_seeds(cfg, round_index, partition.institution_id)
    local = partition.data
    if (
        cfg.smote is not None
        and cfg.model_family == "lr"
        and balance.is_imbalanced(local.y, cfg.smote.target_ratio)
    ):
        local = balance.smote_oversample(local, replace(cfg.smote, seed=smote_seed))
    train_cfg = replace(cfg.local_train, shuffle_seed=shuffle_seed)
    try:
        result = models.train(cfg.model_family, local, train_cfg, global_params)
    except FedriskError as exc:
        raise type(exc)(f"institution {partition.institution_id}: {exc}") from exc
    n_k = len(local) if cfg.post_smote_weighting else partition.n_k
    return n_k, result.params


def fedavg_aggregate(updates) -> models.ParamVector:
    """Sample-count-weighted mean of parameter vectors, in given order."""
    if not updates:
        raise DatasetError("cannot aggregate an empty update list")
    layout = updates[0][1].layout_tag
    total = 0
    for n_k, params in updates:
        if params.layout_tag != layout:
            raise LayoutError(f"layout mismatch: {params.layout_tag} vs {layout}")
        if n_k <= 0:
            raise DatasetError(f"aggregation weight must be positive, got {n_k}")
        total += n_k
    acc = np.zeros_like(updates[0][1].values)
    for n_k, params in updates:
        acc += (n_k / total) * params.values
    return models.ParamVector(acc, layout)


def run_federation(partitions, test: LabeledDataset, cfg: FederationConfig) -> list:
    """Run the full round loop; returns one RoundResult per round.

    The final round's parameters are the experiment's model. Test rows
    must be disjoint from every partition's rows.
    """
    if not partitions:
        raise DatasetError("need at least one partition")
    d = partitions[0].data.n_features
    names = partitions[0].data.feature_names
    for part in partitions:
        if part.data.feature_names != names:
            raise DatasetError(f"institution {part.institution_id} disagrees on feature space")
    if test.feature_names != names:
        raise DatasetError("test set disagrees with partitions on feature space")
    test_keys = set(test.keys)
    for part in partitions:
        overlap = test_keys.intersection(part.data.keys)
        if overlap:
            raise DatasetError(
                f"test rows leak into institution {part.institution_id}: {sorted(overlap)[:3]}"
            )

    by_id = {p.institution_id: p for p in partitions}
    all_ids = sorted(by_id)
    global_params = models.init_params(cfg.model_family, d, derive_seed(cfg.seed, "init"))

    results = []
    for round_index in range(1, cfg.rounds + 1):
        round_rng = np.random.default_rng(derive_seed(cfg.seed, "selection", round_index))
        selected = select_institutions(all_ids, cfg.participation_fraction, round_rng)
        updates = [
            institution_update(by_id[inst], global_params, cfg, round_index)
            for inst in selected
        ]
        global_params = fedavg_aggregate(updates)
        scores = models.predict_proba(global_params, test.X)
        bundle = metrics.evaluate_scores(test.y, scores, cfg.threshold)
        results.append(
            RoundResult(
                round=round_index,
                global_params=global_params,
                metrics=bundle,
                participating=tuple(selected),
            )
        )
    return results


def write_round_history(results, path) -> None:
    """Round-history CSV: round, institutions, and every metric column."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["round", "participating", "accuracy", "precision", "recall", "f1", "roc_auc"]
        )
        for r in results:
            m = r.metrics
            writer.writerow(
                [
                    r.round,
                    ";".join(r.participating),
                    repr(m.accuracy),
                    repr(m.precision),
                    repr(m.recall),
                    repr(m.f1),
                    repr(m.roc_auc),
                ]
            )
