"""Configuration-driven experiment runner and report emission.

Runs any subset of the four-condition matrix (centralized LR,
centralized DNN, federated LR with SMOTE, federated DNN) over one
shared pipeline: every experiment in an invocation sees the identical
train/test split, and the federated and pooled scaler statistics agree
to floating-point error. The master seed fans out into named sub-seeds
(split, init, shuffle, federation) via :func:`fedrisk.seeding.derive_seed`,
so toggling one stage never perturbs another.

Outputs under the chosen directory: ``summary.json`` (one entry per
experiment with the resolved configuration echo, final metrics, and
artifact filenames), ``roc_<name>.csv``, ``rounds_<name>.csv`` for
federated runs, ``correlations.csv``, and ``demographics.csv``. All
files are byte-stable across reruns of the same configuration; the
only exception is the wall_clock_seconds field inside summary.json.

Config file schema (JSON, schema_version 1); every key optional:

    {
      "schema_version": 1,
      "master_seed": 7,
      "data": {"oulad_dir": "path/to/oulad"}
              or {"synthetic": {"n_modules": 7, "students_per_module": 300,
                                "fail_rate": 0.3, "signal_strength": 1.5}},
      "experiments": ["centralized_lr", "centralized_dnn",
                      "federated_lr_smote", "federated_dnn"],
      "test_fraction": 0.2,
      "stratified": true,
      "threshold": 0.5,
      "include_demographics": false,
      "early_clicks_only": false,
      "early_window_days": 90,
      "out_dir": "fedrisk-out",
      "checkpoint_rounds": false,
      "overrides": {
        "centralized_lr": {"learning_rate": 0.1, "epochs": 100,
                            "batch_size": 64, "l2_lambda": 1e-4},
        "centralized_dnn": {"learning_rate": 0.001, "epochs": 20,
                             "batch_size": 64},
        "federated_lr_smote": {"rounds": 20, "participation_fraction": 1.0,
                                "local_epochs": 5, "learning_rate": 0.1,
                                "batch_size": 64, "l2_lambda": 1e-4,
                                "smote_k_neighbors": 5,
                                "smote_target_ratio": 1.0},
        "federated_dnn": {"rounds": 20, "participation_fraction": 1.0,
                           "local_epochs": 5, "learning_rate": 0.001,
                           "batch_size": 64}
      }
    }
"""

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import balance, dataset, federation, metrics, models, preprocess
from .errors import ConfigError
from .seeding import derive_seed

EXPERIMENT_NAMES = (
    "centralized_lr",
    "centralized_dnn",
    "federated_lr_smote",
    "federated_dnn",
)

_SCHEMA_VERSION = 1

_OVERRIDE_KEYS = {
    "centralized_lr": {"learning_rate", "epochs", "batch_size", "l2_lambda"},
    "centralized_dnn": {"learning_rate", "epochs", "batch_size"},
    "federated_lr_smote": {
        "rounds",
        "participation_fraction",
        "local_epochs",
        "learning_rate",
        "batch_size",
        "l2_lambda",
        "smote_k_neighbors",
        "smote_target_ratio",
    },
    "federated_dnn": {
        "rounds",
        "participation_fraction",
        "local_epochs",
        "learning_rate",
        "batch_size",
    },
}

_TOP_LEVEL_KEYS = {
    "schema_version",
    "master_seed",
    "data",
    "experiments",
    "test_fraction",
    "stratified",
    "threshold",
    "include_demographics",
    "early_clicks_only",
    "early_window_days",
    "out_dir",
    "checkpoint_rounds",
    "overrides",
}


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = 0
    oulad_dir: str | None = None
    synthetic: dataset.SyntheticCorpusConfig | None = None
    experiments: tuple = EXPERIMENT_NAMES
    test_fraction: float = 0.2
    stratified: bool = True
    threshold: float = 0.5
    include_demographics: bool = False
    early_clicks_only: bool = False
    early_window_days: int = 90
    out_dir: str = "fedrisk-out"
    checkpoint_rounds: bool = False
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.experiments:
            raise ConfigError("experiments list must not be empty")
        unknown = [e for e in self.experiments if e not in EXPERIMENT_NAMES]
        if unknown:
            raise ConfigError(
                f"unknown experiment(s) {unknown}; valid: {list(EXPERIMENT_NAMES)}"
            )
        if self.oulad_dir is not None and self.synthetic is not None:
            raise ConfigError("configure either oulad_dir or synthetic, not both")
        for name, params in self.overrides.items():
            if name not in EXPERIMENT_NAMES:
                raise ConfigError(f"overrides for unknown experiment {name!r}")
            bad = set(params) - _OVERRIDE_KEYS[name]
            if bad:
                raise ConfigError(f"unknown override key(s) for {name}: {sorted(bad)}")

    def resolved_synthetic(self) -> dataset.SyntheticCorpusConfig:
        base = self.synthetic or dataset.SyntheticCorpusConfig()
        return dataclasses.replace(base, seed=derive_seed(self.master_seed, "corpus"))


def config_from_dict(raw: dict) -> ExperimentConfig:
    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    version = raw.get("schema_version", _SCHEMA_VERSION)
    if version != _SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}; expected {_SCHEMA_VERSION}")

    oulad_dir = None
    synthetic = None
    data = raw.get("data", {})
    if data:
        unknown = set(data) - {"oulad_dir", "synthetic"}
        if unknown:
            raise ConfigError(f"unknown data key(s): {sorted(unknown)}")
        oulad_dir = data.get("oulad_dir")
        if "synthetic" in data:
            try:
                synthetic = dataset.SyntheticCorpusConfig(**data["synthetic"])
            except TypeError as exc:
                raise ConfigError(f"bad synthetic config: {exc}") from None

    kwargs = {
        key: raw[key]
        for key in (
            "master_seed",
            "test_fraction",
            "stratified",
            "threshold",
            "include_demographics",
            "early_clicks_only",
            "early_window_days",
            "out_dir",
            "checkpoint_rounds",
            "overrides",
        )
        if key in raw
    }
    if "experiments" in raw:
        kwargs["experiments"] = tuple(dict.fromkeys(raw["experiments"]))
    return ExperimentConfig(oulad_dir=oulad_dir, synthetic=synthetic, **kwargs)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    return config_from_dict(raw)


@dataclass(frozen=True)
class ExperimentReport:
    name: str
    config_echo: dict
    metrics: metrics.MetricBundle
    roc_file: str
    rounds_file: str | None
    wall_clock_seconds: float
    dataset_fingerprint: dict

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "config": self.config_echo,
            "metrics": self.metrics.to_dict(),
            "roc_file": self.roc_file,
            "rounds_file": self.rounds_file,
            "wall_clock_seconds": self.wall_clock_seconds,
            "dataset_fingerprint": self.dataset_fingerprint,
        }


@dataclass
class MatrixResult:
    config: ExperimentConfig
    reports: list
    curves: dict
    round_histories: dict
    correlations: pd.DataFrame
    demographics: pd.DataFrame
    fingerprint: dict


def _resolved_params(cfg: ExperimentConfig, name: str) -> dict:
    defaults = {
        "centralized_lr": {"learning_rate": 0.1, "epochs": 100, "batch_size": 64, "l2_lambda": 1e-4},
        "centralized_dnn": {"learning_rate": 0.001, "epochs": 20, "batch_size": 64},
        "federated_lr_smote": {
            "rounds": 20,
            "participation_fraction": 1.0,
            "local_epochs": 5,
            "learning_rate": 0.1,
            "batch_size": 64,
            "l2_lambda": 1e-4,
            "smote_k_neighbors": 5,
            "smote_target_ratio": 1.0,
        },
        "federated_dnn": {
            "rounds": 20,
            "participation_fraction": 1.0,
            "local_epochs": 5,
            "learning_rate": 0.001,
            "batch_size": 64,
        },
    }[name]
    resolved = dict(defaults)
    resolved.update(cfg.overrides.get(name, {}))
    return resolved


def _config_echo(cfg: ExperimentConfig, name: str, params: dict) -> dict:
    if cfg.oulad_dir is not None:
        source = {"oulad_dir": str(cfg.oulad_dir)}
    else:
        source = {"synthetic": dataclasses.asdict(cfg.resolved_synthetic())}
    return {
        "experiment": name,
        "master_seed": cfg.master_seed,
        "data": source,
        "test_fraction": cfg.test_fraction,
        "stratified": cfg.stratified,
        "threshold": cfg.threshold,
        "include_demographics": cfg.include_demographics,
        "early_clicks_only": cfg.early_clicks_only,
        "early_window_days": cfg.early_window_days,
        "model_family": "mlp" if name.endswith("dnn") else "lr",
        "parameters": params,
    }


def _load_tables(cfg: ExperimentConfig) -> dataset.RawTables:
    if cfg.oulad_dir is not None:
        return dataset.load_oulad(cfg.oulad_dir)
    return dataset.generate_synthetic_corpus(cfg.resolved_synthetic())


def build_dataset(cfg: ExperimentConfig, tables: dataset.RawTables) -> dataset.LabeledDataset:
    """Label, engineer the three feature families, and assemble."""
    labels = dataset.label_students(tables.student_info)
    early = dataset.early_performance_features(
        tables.assessments_meta, tables.student_assessment, cfg.early_window_days
    )
    clicks = tables.student_vle
    if cfg.early_clicks_only:
        clicks = clicks[clicks["date"] <= cfg.early_window_days]
    volume = dataset.engagement_volume_features(clicks)
    quality = dataset.engagement_quality_features(clicks, tables.vle_meta)
    demographics = tables.student_info if cfg.include_demographics else None
    return dataset.assemble_dataset(labels, early, volume, quality, demographics)


def correlation_report(ds: dataset.LabeledDataset) -> pd.DataFrame:
    """Pearson r of each feature against the label; constant features flag r=0."""
    if len(ds) == 0:
        raise ConfigError("cannot correlate an empty dataset")
    y = ds.y.astype(np.float64)
    yc = y - y.mean()
    sy = float(np.sqrt(np.mean(yc * yc)))
    rows = []
    for j, name in enumerate(ds.feature_names):
        x = ds.X[:, j]
        xc = x - x.mean()
        sx = float(np.sqrt(np.mean(xc * xc)))
        degenerate = sx == 0.0 or sy == 0.0
        r = 0.0 if degenerate else float(np.mean(xc * yc) / (sx * sy))
        rows.append({"feature": name, "pearson_r": r, "degenerate": degenerate})
    return pd.DataFrame(rows, columns=["feature", "pearson_r", "degenerate"])


def run_matrix(cfg: ExperimentConfig) -> MatrixResult:
    """Run every configured experiment over one shared data pipeline."""
    tables = _load_tables(cfg)
    ds = build_dataset(cfg, tables)
    fingerprint = {
        "rows": len(ds),
        "positive_fraction": ds.positive_fraction(),
        "feature_count": ds.n_features,
    }

    split_cfg = preprocess.SplitConfig(
        test_fraction=cfg.test_fraction,
        stratified=cfg.stratified,
        seed=derive_seed(cfg.master_seed, "split"),
    )
    train_set, test_set = preprocess.split_train_test(ds, split_cfg)
    partitions = preprocess.partition_by_module(train_set)

    pooled_scaler = preprocess.fit_scaler(train_set)
    fed_scaler = preprocess.federated_fit_scaler(partitions)

    scaled_train = preprocess.apply_scaler(pooled_scaler, train_set)
    scaled_test_pooled = preprocess.apply_scaler(pooled_scaler, test_set)
    scaled_test_fed = preprocess.apply_scaler(fed_scaler, test_set)
    scaled_partitions = [
        preprocess.ClientPartition(
            institution_id=p.institution_id,
            data=preprocess.apply_scaler(fed_scaler, p.data),
            n_k=p.n_k,
        )
        for p in partitions
    ]

    reports = []
    curves = {}
    round_histories = {}
    for name in cfg.experiments:
        params = _resolved_params(cfg, name)
        started = time.perf_counter()
        if name.startswith("centralized"):
            family = "mlp" if name == "centralized_dnn" else "lr"
            if family == "lr":
                train_cfg = models.TrainConfig(
                    learning_rate=params["learning_rate"],
                    epochs=params["epochs"],
                    batch_size=params["batch_size"],
                    l2_lambda=params["l2_lambda"],
                    optimizer="sgd",
                    shuffle_seed=derive_seed(cfg.master_seed, "shuffle", name),
                )
            else:
                train_cfg = models.TrainConfig(
                    learning_rate=params["learning_rate"],
                    epochs=params["epochs"],
                    batch_size=params["batch_size"],
                    optimizer="adam",
                    shuffle_seed=derive_seed(cfg.master_seed, "shuffle", name),
                )
            init = models.init_params(
                family, ds.n_features, derive_seed(cfg.master_seed, "init", name)
            )
            result = models.train(family, scaled_train, train_cfg, init)
            scores = models.predict_proba(result.params, scaled_test_pooled.X)
            bundle = metrics.evaluate_scores(test_set.y, scores, cfg.threshold)
            curve = metrics.roc_curve(test_set.y, scores)
            rounds_file = None
        else:
            family = "mlp" if name == "federated_dnn" else "lr"
            local_epochs = params["local_epochs"]
            if family == "lr":
                local_train = models.TrainConfig(
                    learning_rate=params["learning_rate"],
                    epochs=local_epochs,
                    batch_size=params["batch_size"],
                    l2_lambda=params["l2_lambda"],
                    optimizer="sgd",
                )
                smote_cfg = balance.SmoteConfig(
                    k_neighbors=params["smote_k_neighbors"],
                    target_ratio=params["smote_target_ratio"],
                )
            else:
                local_train = models.TrainConfig(
                    learning_rate=params["learning_rate"],
                    epochs=local_epochs,
                    batch_size=params["batch_size"],
                    optimizer="adam",
                )
                smote_cfg = None
            fed_cfg = federation.FederationConfig(
                model_family=family,
                local_train=local_train,
                rounds=params["rounds"],
                participation_fraction=params["participation_fraction"],
                smote=smote_cfg,
                seed=derive_seed(cfg.master_seed, "federation", name),
                threshold=cfg.threshold,
            )
            history = federation.run_federation(scaled_partitions, scaled_test_fed, fed_cfg)
            round_histories[name] = history
            final = history[-1]
            bundle = final.metrics
            scores = models.predict_proba(final.global_params, scaled_test_fed.X)
            curve = metrics.roc_curve(test_set.y, scores)
            rounds_file = f"rounds_{name}.csv"
        elapsed = time.perf_counter() - started

        curves[name] = curve
        reports.append(
            ExperimentReport(
                name=name,
                config_echo=_config_echo(cfg, name, params),
                metrics=bundle,
                roc_file=f"roc_{name}.csv",
                rounds_file=rounds_file,
                wall_clock_seconds=elapsed,
                dataset_fingerprint=fingerprint,
            )
        )

    return MatrixResult(
        config=cfg,
        reports=reports,
        curves=curves,
        round_histories=round_histories,
        correlations=correlation_report(ds),
        demographics=dataset.summarize_demographics(tables.student_info),
        fingerprint=fingerprint,
    )


def run_experiment(cfg: ExperimentConfig, name: str) -> ExperimentReport:
    """Run a single named experiment end to end."""
    solo = dataclasses.replace(cfg, experiments=(name,))
    return run_matrix(solo).reports[0]


def emit_reports(result: MatrixResult, out_dir) -> list:
    """Write summary.json plus the per-experiment and dataset CSV files.

    Artifact references inside summary.json are paths relative to
    ``out_dir``, so identical runs produce identical bytes regardless of
    where they are written (wall_clock_seconds aside).
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"out_dir {out_dir} is not writable: {exc}") from None
    written = []

    for report in result.reports:
        roc_path = out_dir / report.roc_file
        metrics.write_roc_csv(result.curves[report.name], roc_path)
        written.append(roc_path)
        if report.rounds_file:
            rounds_path = out_dir / report.rounds_file
            federation.write_round_history(result.round_histories[report.name], rounds_path)
            written.append(rounds_path)
        if result.config.checkpoint_rounds and report.name in result.round_histories:
            for round_result in result.round_histories[report.name]:
                ckpt = out_dir / f"params_{report.name}_round_{round_result.round:03d}.json"
                models.save_params(round_result.global_params, ckpt)
                written.append(ckpt)

    summary = {
        "schema_version": _SCHEMA_VERSION,
        "master_seed": result.config.master_seed,
        "dataset": result.fingerprint,
        "experiments": {r.name: r.to_dict() for r in result.reports},
    }
    summary_path = out_dir / "summary.json"
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(summary_path)

    correlations_path = out_dir / "correlations.csv"
    result.correlations.to_csv(correlations_path, index=False)
    written.append(correlations_path)

    demographics_path = out_dir / "demographics.csv"
    result.demographics.to_csv(demographics_path, index=False)
    written.append(demographics_path)
    return written
