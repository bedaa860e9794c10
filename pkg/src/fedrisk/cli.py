"""Command-line entry point.

Runs the configured experiment matrix and writes reports. Flags
override config-file values. Exit codes: 0 success, 2 config error,
3 data error, 4 training error, 5 I/O error. On failure a single JSON
line {"error_category": ..., "message": ...} goes to stderr.
"""

import argparse
import dataclasses
import json
import sys

from . import experiment
from .errors import ConfigError, DatasetError, FedriskError, MetricsError, SplitError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedrisk",
        description=(
            "Train and compare centralized and federated at-risk-student "
            "classifiers on OULAD-format or synthetic data."
        ),
    )
    parser.add_argument("--config", help="JSON config file (see fedrisk.experiment)")
    parser.add_argument("--data-dir", help="directory with the five OULAD CSV files")
    parser.add_argument(
        "--synthetic",
        action="store_true",
        help="use a generated synthetic corpus instead of OULAD files",
    )
    parser.add_argument("--out-dir", help="output directory for reports")
    parser.add_argument(
        "--experiment",
        action="append",
        choices=experiment.EXPERIMENT_NAMES,
        help="experiment to run (repeatable; default: all four)",
    )
    parser.add_argument("--seed", type=int, help="master seed")
    return parser


def _apply_flags(cfg: experiment.ExperimentConfig, args) -> experiment.ExperimentConfig:
    updates = {}
    if args.data_dir is not None:
        updates["oulad_dir"] = args.data_dir
        updates["synthetic"] = None
    if args.synthetic:
        if args.data_dir is not None:
            raise ConfigError("--synthetic and --data-dir are mutually exclusive")
        updates["oulad_dir"] = None
        if cfg.synthetic is None:
            updates["synthetic"] = experiment.dataset.SyntheticCorpusConfig()
    if args.out_dir is not None:
        updates["out_dir"] = args.out_dir
    if args.experiment:
        updates["experiments"] = tuple(dict.fromkeys(args.experiment))
    if args.seed is not None:
        updates["master_seed"] = args.seed
    return dataclasses.replace(cfg, **updates) if updates else cfg


_EXIT_CODES = {"config": 2, "data": 3, "training": 4, "io": 5}


def _fail(category: str, message: str) -> int:
    print(json.dumps({"error_category": category, "message": message}), file=sys.stderr)
    return _EXIT_CODES.get(category, 1)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = experiment.load_config(args.config) if args.config else experiment.ExperimentConfig()
        cfg = _apply_flags(cfg, args)
        if cfg.oulad_dir is None and cfg.synthetic is None:
            raise ConfigError(
                "no data source: pass --data-dir, --synthetic, or a config with a data section"
            )
        result = experiment.run_matrix(cfg)
        written = experiment.emit_reports(result, cfg.out_dir)
    except ConfigError as exc:
        return _fail("config", str(exc))
    except (DatasetError, SplitError, MetricsError) as exc:
        return _fail("data", str(exc))
    except FedriskError as exc:
        return _fail(exc.category, str(exc))
    except OSError as exc:
        return _fail("io", str(exc))

    for report in result.reports:
        m = report.metrics
        print(
            f"{report.name}: roc_auc={m.roc_auc:.4f} accuracy={m.accuracy:.4f} "
            f"precision={m.precision:.4f} recall={m.recall:.4f} f1={m.f1:.4f}"
        )
    print(f"wrote {len(written)} file(s) to {cfg.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
