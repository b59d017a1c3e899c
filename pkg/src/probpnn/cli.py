"""Command-line interface: synthetic | prepare | train | evaluate.

Exit codes: 0 on success, 1 on runtime failure, 2 on configuration or
validation errors. A typical session:

    probpnn synthetic --out runs/demo --series 5 --weeks 16 --seed 7
    probpnn prepare  --config runs/demo/config.json
    probpnn train    --config runs/demo/config.json
    probpnn evaluate --config runs/demo/config.json
"""

from __future__ import annotations

import argparse
import sys
from datetime import timedelta
from pathlib import Path

from .pipeline import (ALL_METHODS, ConfigError, RunConfig, SeriesSpec,
                       evaluate_run, prepare_run, train_run)
from .synthetic import DEFAULT_START, generate_family, write_series_csv
from .timeseries import IngestionError

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="run config JSON")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--out", default=None,
                        help="override the config output directory")
    parser.add_argument("--methods", default=None,
                        help="comma-separated subset of "
                             + ",".join(ALL_METHODS))
    parser.add_argument("--jobs", type=int, default=None,
                        help="worker processes for per-series tasks")


def _load_config(args) -> RunConfig:
    config = RunConfig.from_json(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.out_dir = args.out
    if args.methods is not None:
        config.methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if args.jobs is not None:
        config.jobs = args.jobs
    config.validate()
    return config


def cmd_synthetic(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_dir = out / "data"
    data_dir.mkdir(exist_ok=True)
    family = generate_family(args.series, args.weeks, args.seed)
    specs = []
    for ts in family:
        path = data_dir / f"{ts.name}.csv"
        write_series_csv(ts, path)
        specs.append(SeriesSpec(name=ts.name, csv=str(path),
                                value_column=ts.name))
    train_weeks = args.train_weeks
    if train_weeks is None:
        train_weeks = max(args.weeks - 2, 1)
    if train_weeks >= args.weeks:
        print(f"error: --train-weeks must be below --weeks", file=sys.stderr)
        return EXIT_CONFIG
    split = DEFAULT_START + timedelta(weeks=train_weeks)
    end = DEFAULT_START + timedelta(weeks=args.weeks)
    config = RunConfig(
        dataset_style=args.style,
        series=specs,
        train_start=DEFAULT_START,
        train_end=split,
        test_start=split,
        test_end=end,
        out_dir=str(out),
        seed=args.seed,
    )
    config.model.epochs = args.epochs
    config.validate()
    config.save_json(out / "config.json")
    print(f"wrote {len(specs)} series to {data_dir} "
          f"and a run config to {out / 'config.json'}")
    return EXIT_OK


def cmd_prepare(args) -> int:
    config = _load_config(args)
    summary = prepare_run(config, dump_windows=args.dump_windows)
    print(f"prepared {summary['series_count']} series:")
    for entry in summary["series"]:
        print(f"  {entry['series']}: {entry['n']} points, "
              f"{entry['train_windows']} train / {entry['test_windows']} test "
              f"windows, {entry['train_skipped'] + entry['test_skipped']} "
              f"origins skipped")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args)
    summary = train_run(config)
    for entry in summary["trained"]:
        print(f"  {entry['series']} / {entry['method']}: "
              f"final loss {entry['final_loss']:.6f} "
              f"in {entry['training_seconds']:.1f} s")
    if summary["failures"]:
        for failure in summary["failures"]:
            print(f"  FAILED {failure['series']} / {failure['method']}: "
                  f"{failure['error']}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    report = evaluate_run(config)
    print(f"{'method':<16} " + " ".join(f"{m:>8}" for m in
                                        ("ncrps", "npl", "dicr", "nmae")))
    for method in report["methods"]:
        avg = report["averages"][method]
        print(f"{method:<16} " + " ".join(
            f"{avg[m]:>8.4f}" for m in ("ncrps", "npl", "dicr", "nmae")))
    print(f"report written to {Path(config.out_dir) / 'evaluate' / 'report.json'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="probpnn",
        description="Probabilistic forecasting from calendar-grouped rolling "
                    "statistics plus a small convolutional network.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthetic",
                       help="generate seeded synthetic series plus a run config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--series", type=int, default=5)
    p.add_argument("--weeks", type=int, default=16)
    p.add_argument("--train-weeks", type=int, default=None,
                   help="training weeks (default: weeks - 2)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--style", choices=("electricity", "traffic"),
                   default="electricity")
    p.add_argument("--epochs", type=int, default=50)
    p.set_defaults(func=cmd_synthetic)

    p = sub.add_parser("prepare", help="ingest CSVs and materialize artifacts")
    _add_common(p)
    p.add_argument("--dump-windows", action="store_true",
                   help="also write a debug CSV of the training windows")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train the requested model variants")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score all methods on the test period")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, IngestionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
