import json
from dataclasses import replace

import numpy as np
import pytest

from conftest import make_dataset
from fedrisk import cli, models
from fedrisk.balance import SmoteConfig, smote_oversample
from fedrisk.dataset import SyntheticCorpusConfig
from fedrisk.errors import ConfigError
from fedrisk.experiment import (
    EXPERIMENT_NAMES,
    ExperimentConfig,
    config_from_dict,
    correlation_report,
    emit_reports,
    load_config,
    run_experiment,
    run_matrix,
)
from fedrisk.federation import local_seeds
from fedrisk.metrics import evaluate_scores
from fedrisk.preprocess import federated_fit_scaler, fit_scaler, partition_by_module
from fedrisk.seeding import derive_seed

SMALL_SYNTH = SyntheticCorpusConfig(n_modules=3, students_per_module=60, fail_rate=0.3, signal_strength=1.2)


def small_config(**kwargs):
    defaults = dict(synthetic=SMALL_SYNTH, master_seed=5)
    defaults.update(kwargs)
    return ExperimentConfig(**defaults)


def strip_wall_clock(obj):
    if isinstance(obj, dict):
        return {k: strip_wall_clock(v) for k, v in obj.items() if k != "wall_clock_seconds"}
    if isinstance(obj, list):
        return [strip_wall_clock(v) for v in obj]
    return obj


class TestConfig:
    def test_empty_experiments_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(experiments=())

    def test_unknown_experiment_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(experiments=("centralised_svm",))

    def test_both_sources_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(oulad_dir="x", synthetic=SMALL_SYNTH)

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            config_from_dict({"master_sed": 1})

    def test_unknown_override_key_rejected(self):
        with pytest.raises(ConfigError, match="override"):
            ExperimentConfig(overrides={"centralized_lr": {"momentum": 0.9}})

    def test_schema_version_checked(self):
        with pytest.raises(ConfigError, match="schema_version"):
            config_from_dict({"schema_version": 99})

    def test_round_trip_from_dict(self):
        cfg = config_from_dict(
            {
                "master_seed": 3,
                "data": {"synthetic": {"n_modules": 2, "students_per_module": 30}},
                "experiments": ["centralized_lr"],
                "overrides": {"centralized_lr": {"epochs": 5}},
            }
        )
        assert cfg.master_seed == 3
        assert cfg.synthetic.n_modules == 2
        assert cfg.experiments == ("centralized_lr",)

    def test_load_config_rejects_bad_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(path)


class TestCorrelationReport:
    def test_feature_equal_to_target(self):
        y = np.array([0, 1, 0, 1, 1], dtype=np.int64)
        ds = make_dataset(np.stack([y.astype(float), 1.0 - y, np.ones(5)], axis=1), y)
        report = correlation_report(ds).set_index("feature")
        assert report.loc["f0", "pearson_r"] == pytest.approx(1.0, abs=1e-12)
        assert report.loc["f1", "pearson_r"] == pytest.approx(-1.0, abs=1e-12)
        assert report.loc["f2", "pearson_r"] == 0.0
        assert bool(report.loc["f2", "degenerate"])
        assert not bool(report.loc["f0", "degenerate"])


class TestRunMatrix:
    def test_shared_split_and_scalers(self):
        cfg = small_config()
        result = run_matrix(cfg)
        assert [r.name for r in result.reports] == list(EXPERIMENT_NAMES)
        fingerprints = {json.dumps(r.dataset_fingerprint, sort_keys=True) for r in result.reports}
        assert len(fingerprints) == 1
        assert all(r.metrics.roc_auc > 0.5 for r in result.reports)

    def test_pooled_and_federated_scalers_agree(self):
        rng = np.random.default_rng(0)
        modules = [chr(ord("A") + i % 4) * 3 for i in range(200)]
        ds = make_dataset(rng.normal(size=(200, 3)) * 7 + 2, rng.integers(0, 2, 200), modules=modules)
        pooled = fit_scaler(ds)
        federated = federated_fit_scaler(partition_by_module(ds))
        assert np.allclose(pooled.mean, federated.mean, rtol=1e-9)
        assert np.allclose(pooled.std, federated.std, rtol=1e-9)

    def test_planted_signal_recoverable(self):
        synth = SyntheticCorpusConfig(n_modules=3, students_per_module=150, fail_rate=0.3, signal_strength=1.2)
        cfg = small_config(synthetic=synth, experiments=("centralized_lr",))
        report = run_experiment(cfg, "centralized_lr")
        assert report.metrics.roc_auc >= 0.8

    def test_federated_single_module_equals_centralized_with_smote(self):
        # one institution, full participation, one round: the federated
        # run must equal plain training on the SMOTE-balanced partition
        synth = SyntheticCorpusConfig(n_modules=1, students_per_module=80, fail_rate=0.3, signal_strength=1.0)
        overrides = {"federated_lr_smote": {"rounds": 1, "local_epochs": 6}}
        cfg = ExperimentConfig(
            synthetic=synth, master_seed=9, experiments=("federated_lr_smote",), overrides=overrides
        )
        report = run_experiment(cfg, "federated_lr_smote")

        from fedrisk import dataset as ds_mod
        from fedrisk import preprocess

        tables = ds_mod.generate_synthetic_corpus(cfg.resolved_synthetic())
        from fedrisk.experiment import build_dataset

        ds = build_dataset(cfg, tables)
        split_cfg = preprocess.SplitConfig(seed=derive_seed(9, "split"))
        train_set, test_set = preprocess.split_train_test(ds, split_cfg)
        parts = partition_by_module(train_set)
        scaler = federated_fit_scaler(parts)
        scaled_part = preprocess.apply_scaler(scaler, parts[0].data)
        scaled_test = preprocess.apply_scaler(scaler, test_set)

        from fedrisk.federation import FederationConfig

        fed_seed = derive_seed(9, "federation", "federated_lr_smote")
        fed_cfg = FederationConfig(
            model_family="lr",
            local_train=models.TrainConfig(
                learning_rate=0.1, epochs=6, batch_size=64, l2_lambda=1e-4, optimizer="sgd"
            ),
            rounds=1,
            smote=SmoteConfig(),
            seed=fed_seed,
        )
        shuffle_seed, smote_seed = local_seeds(fed_cfg, 1, "AAA")
        balanced = smote_oversample(scaled_part, SmoteConfig(seed=smote_seed))
        init = models.init_params("lr", ds.n_features, derive_seed(fed_seed, "init"))
        centralized = models.train(
            "lr", balanced, replace(fed_cfg.local_train, shuffle_seed=shuffle_seed), init
        )
        scores = models.predict_proba(centralized.params, scaled_test.X)
        manual_bundle = evaluate_scores(test_set.y, scores, 0.5)
        assert report.metrics == manual_bundle

    def test_overrides_change_run(self):
        cfg = small_config(
            experiments=("centralized_lr",), overrides={"centralized_lr": {"epochs": 2}}
        )
        fast = run_matrix(cfg)
        assert fast.reports[0].config_echo["parameters"]["epochs"] == 2

    def test_auc_monotone_in_signal_and_null_at_zero(self):
        import statistics

        seeds = (101, 202, 303)
        medians = {}
        for signal in (0.0, 0.75, 1.5):
            per_exp = {}
            for seed in seeds:
                cfg = ExperimentConfig(
                    synthetic=SyntheticCorpusConfig(7, 150, 0.3, signal), master_seed=seed
                )
                for report in run_matrix(cfg).reports:
                    per_exp.setdefault(report.name, []).append(report.metrics.roc_auc)
            medians[signal] = {k: statistics.median(v) for k, v in per_exp.items()}
        for name in EXPERIMENT_NAMES:
            assert medians[0.0][name] <= medians[0.75][name] <= medians[1.5][name]
            assert 0.45 <= medians[0.0][name] <= 0.55


class TestEmitReports:
    def test_files_written(self, tmp_path):
        cfg = small_config(experiments=("centralized_lr", "federated_dnn"))
        result = run_matrix(cfg)
        written = emit_reports(result, tmp_path)
        names = {p.name for p in written}
        assert names == {
            "summary.json",
            "roc_centralized_lr.csv",
            "roc_federated_dnn.csv",
            "rounds_federated_dnn.csv",
            "correlations.csv",
            "demographics.csv",
        }
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert set(summary["experiments"]) == {"centralized_lr", "federated_dnn"}
        assert summary["experiments"]["centralized_lr"]["rounds_file"] is None

    def test_byte_stable_modulo_wall_clock(self, tmp_path):
        cfg = small_config(experiments=("centralized_lr", "federated_lr_smote"))
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        emit_reports(run_matrix(cfg), out_a)
        emit_reports(run_matrix(cfg), out_b)
        for name in ("roc_centralized_lr.csv", "rounds_federated_lr_smote.csv", "correlations.csv"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()
        sa = strip_wall_clock(json.loads((out_a / "summary.json").read_text()))
        sb = strip_wall_clock(json.loads((out_b / "summary.json").read_text()))
        assert json.dumps(sa, sort_keys=True) == json.dumps(sb, sort_keys=True)

    def test_checkpoints_opt_in(self, tmp_path):
        cfg = small_config(
            experiments=("federated_dnn",),
            checkpoint_rounds=True,
            overrides={"federated_dnn": {"rounds": 2, "local_epochs": 1}},
        )
        emit_reports(run_matrix(cfg), tmp_path)
        assert (tmp_path / "params_federated_dnn_round_001.json").is_file()
        assert (tmp_path / "params_federated_dnn_round_002.json").is_file()


class TestCli:
    def test_synthetic_run(self, tmp_path, capsys):
        out = tmp_path / "out"
        rc = cli.main(
            ["--synthetic", "--seed", "3", "--out-dir", str(out), "--experiment", "centralized_lr"]
        )
        assert rc == 0
        assert (out / "summary.json").is_file()
        stdout = capsys.readouterr().out
        assert "centralized_lr" in stdout

    def test_flags_override_config_file(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(
            json.dumps(
                {
                    "master_seed": 1,
                    "data": {"synthetic": {"n_modules": 2, "students_per_module": 40}},
                    "experiments": ["centralized_lr", "centralized_dnn"],
                    "overrides": {
                        "centralized_lr": {"epochs": 3},
                        "centralized_dnn": {"epochs": 2},
                    },
                }
            )
        )
        out = tmp_path / "out"
        rc = cli.main(
            [
                "--config",
                str(cfg_path),
                "--seed",
                "8",
                "--out-dir",
                str(out),
                "--experiment",
                "centralized_lr",
            ]
        )
        assert rc == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["master_seed"] == 8
        assert list(summary["experiments"]) == ["centralized_lr"]

    def test_missing_source_is_config_error(self, tmp_path, capsys):
        rc = cli.main(["--out-dir", str(tmp_path / "x")])
        assert rc == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error_category"] == "config"

    def test_missing_data_dir_is_data_error(self, tmp_path, capsys):
        rc = cli.main(["--data-dir", str(tmp_path / "nope"), "--out-dir", str(tmp_path / "o")])
        assert rc == 3
        err = json.loads(capsys.readouterr().err)
        assert err["error_category"] == "data"

    def test_conflicting_sources_rejected(self, tmp_path, capsys):
        rc = cli.main(["--synthetic", "--data-dir", str(tmp_path)])
        assert rc == 2
