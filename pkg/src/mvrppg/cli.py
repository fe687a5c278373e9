"""Command-line entry point: generate, train, eval, ablate, report."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from .container import read_dataset, write_dataset
from .data import prepare_clips
from .errors import ConfigError, DataError, NumericError
from .experiment import (
    ABLATIONS,
    ExperimentConfig,
    ablation_config,
    format_table,
    parse_csv,
    report,
    run_experiment,
    split_windows,
)
from .synth import SCENARIOS, BenchmarkSpec, generate_benchmark
from .training import train

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def _load_json(path) -> dict:
    if path is None:
        return {}
    try:
        d = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return d


def _experiment_config(args) -> ExperimentConfig:
    d = _load_json(args.config)
    for key in ("seed", "views", "scenario", "dataset"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    if args.out is not None:
        d["out_dir"] = args.out
    return ExperimentConfig.from_dict(d)


def cmd_generate(args) -> int:
    d = _load_json(args.config)
    unknown = set(d) - {f.name for f in fields(BenchmarkSpec)}
    if unknown:
        raise ConfigError(f"unknown benchmark options: {sorted(unknown)}")
    for key in ("resolution", "hr_range", "scenarios"):
        if key in d:
            d[key] = tuple(d[key])
    if args.seed is not None:
        d["seed"] = args.seed
    if args.scenario is not None:
        d["scenarios"] = (args.scenario,)
    spec = BenchmarkSpec(**d)
    manifest = write_dataset(generate_benchmark(spec), args.out)
    print(f"wrote {len(manifest['clips'])} clips to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _experiment_config(args)
    if cfg.dataset is None:
        raise ConfigError("--dataset (or 'dataset' in the config) is required")
    clips = read_dataset(cfg.dataset)
    if cfg.train_scenarios is not None:
        clips = [c for c in clips if c.config.scenario in cfg.train_scenarios]
    windows = prepare_clips(clips, use_atoc=cfg.use_atoc, window=cfg.window)
    train_w, _ = split_windows(windows, cfg.split)
    result = train(train_w, cfg.train_config(), cfg.out_dir or ".")
    print(f"trained {len(result.log)} steps; final l_total {result.log[-1]['l_total']:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _experiment_config(args)
    result = run_experiment(cfg)
    print(format_table([result.row]), end="")
    return 0


def cmd_ablate(args) -> int:
    base = _experiment_config(args)
    if base.method != "mvrd_rppg":
        raise ConfigError("ablations apply to the mvrd_rppg method")
    if base.dataset is None:
        raise ConfigError("--dataset (or 'dataset' in the config) is required")
    clips = read_dataset(base.dataset)
    arms = args.arms.split(",") if args.arms else list(ABLATIONS)
    prepared = {}
    rows = []
    for arm in arms:
        cfg = ablation_config(base, arm)
        if cfg.use_atoc not in prepared:
            prepared[cfg.use_atoc] = prepare_clips(clips, use_atoc=cfg.use_atoc, window=cfg.window)
        res = run_experiment(cfg, windows=prepared[cfg.use_atoc])
        res.row.method = f"mvrd_rppg:{arm}"
        rows.append(res.row)
    csv_text, table = report(rows)
    if base.out_dir:
        Path(base.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(base.out_dir) / "ablation.csv").write_text(csv_text)
    print(table, end="")
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in args.inputs:
        p = Path(path)
        if not p.is_file():
            raise DataError(f"missing file: {p}")
        rows.extend(parse_csv(p.read_text()))
    csv_text, table = report(rows)
    if args.out:
        Path(args.out).write_text(csv_text)
    print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvrppg", description="Multi-view rPPG benchmark toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=out_required)
        p.add_argument("--scenario", choices=SCENARIOS)

    g = sub.add_parser("generate", help="synthesise a three-view benchmark dataset")
    common(g, out_required=True)
    g.set_defaults(func=cmd_generate)

    for name, func, help_ in (
        ("train", cmd_train, "train the fused model"),
        ("eval", cmd_eval, "evaluate a method on the held-out subjects"),
        ("ablate", cmd_ablate, "run component and loss ablation arms"),
    ):
        p = sub.add_parser(name, help=help_)
        common(p)
        p.add_argument("--dataset")
        p.add_argument("--views", help="available views, e.g. lcr, cr, c")
        if name == "ablate":
            p.add_argument("--arms", help=f"comma-separated subset of {','.join(ABLATIONS)}")
        p.set_defaults(func=func)

    r = sub.add_parser("report", help="merge metric CSVs into one table")
    r.add_argument("inputs", nargs="+")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
