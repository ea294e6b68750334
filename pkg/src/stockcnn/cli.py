"""``stockcnn`` command line: one subcommand per pipeline stage.

Success prints a JSON summary on stdout and exits 0.  Failure prints
``{"error": ..., "message": ...}`` (plus ``missing``/``produced_by`` for an
absent prerequisite) on stderr and exits 1, or 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import ConfigError, load_config, parse_override
from .dataset import DatasetFormatError, NormKind
from .market_data import InsufficientDataError, MarketDataError
from .nn import TrainingDivergedError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stockcnn", description="Stock-image CNN experiment pipeline.")
    parser.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. --set train.max_epochs=50 (repeatable)")
    common.add_argument("--data-dir", help="directory of <TICKER>.csv files")
    common.add_argument("--output-dir", help="root directory for all outputs")
    common.add_argument("--tickers", help="comma-separated ticker list")
    common.add_argument("--seed", type=int)
    common.add_argument("--variants", help="comma-separated variants, e.g. cnn_log_row_minmax,lasso_global_minmax")

    ing = sub.add_parser("ingest", parents=[common], help="validate OHLCV files")
    ing.add_argument("paths", nargs="*", help="CSV files or directories (default: data_dir)")
    sub.add_parser("diagnose", parents=[common], help="entropy, chi-square and burstiness exports")
    bd = sub.add_parser("build-dataset", parents=[common], help="write normalized train/test datasets")
    bd.add_argument("--mode", action="append", choices=[k.value for k in NormKind],
                    help="normalization(s) to build (default: those the variants need)")
    for name, text in (("train", "fit every variant"), ("evaluate", "classification metrics on the test range"),
                       ("backtest", "trading simulation on the test range"), ("report", "merge results"),
                       ("run", "every stage in order")):
        sub.add_parser(name, parents=[common], help=text)
    return parser


def _overrides(args) -> dict:
    out = dict(parse_override(s) for s in args.set)
    for flag, key in (("data_dir", "data_dir"), ("output_dir", "output_dir"), ("tickers", "tickers"),
                      ("seed", "seed"), ("variants", "variants")):
        value = getattr(args, flag)
        if value is not None:
            out[key] = value
    return out


def dispatch(args) -> dict:
    cfg = load_config(args.config, _overrides(args))
    cmd = args.command
    if cmd == "ingest":
        return pipeline.ingest(args.paths or [cfg.data_dir], cfg.output_dir)
    if cmd == "diagnose":
        return pipeline.diagnose(cfg)
    if cmd == "build-dataset":
        return pipeline.build_datasets(cfg, args.mode)
    if cmd == "train":
        return pipeline.train_models(cfg)
    if cmd == "evaluate":
        return pipeline.evaluate(cfg)
    if cmd == "backtest":
        return pipeline.backtest(cfg)
    if cmd == "report":
        return pipeline.make_report(cfg)
    stages = {}
    stages["ingest"] = pipeline.ingest([cfg.data_dir], cfg.output_dir)
    stages["diagnose"] = pipeline.diagnose(cfg)
    stages["build-dataset"] = pipeline.build_datasets(cfg)
    stages["train"] = pipeline.train_models(cfg)
    stages["evaluate"] = pipeline.evaluate(cfg)
    stages["backtest"] = pipeline.backtest(cfg)
    stages["report"] = pipeline.make_report(cfg)
    return stages


def _error(kind: str, exc: Exception, **extra) -> dict:
    return {"error": kind, "message": str(exc), **extra}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = dispatch(args)
    except ConfigError as exc:
        print(json.dumps(_error("config", exc)), file=sys.stderr)
        return 2
    except pipeline.MissingArtifactError as exc:
        print(json.dumps(_error("missing_artifact", exc, missing=str(exc.path), produced_by=exc.produced_by)),
              file=sys.stderr)
        return 1
    except (MarketDataError, InsufficientDataError, DatasetFormatError, TrainingDivergedError,
            OSError, ValueError, KeyError) as exc:
        print(json.dumps(_error(type(exc).__name__, exc)), file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    if args.command == "ingest" and result["valid"] == 0:
        print(json.dumps({"error": "no_valid_input", "message": "every input file failed validation"}),
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
