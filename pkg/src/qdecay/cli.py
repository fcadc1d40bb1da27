"""Command-line entry point: ``qdecay <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import yaml

from .errors import ConfigError, InvalidArgumentError, NumericFailureError, QDecayError
from .experiments import ExperimentConfig, default_config, load_config, run_experiment
from .report import FORMATS, OutputError, emit_outputs

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4

SUBCOMMANDS = {
    "compare-schedules": "compare_schedules",
    "final-error": "final_error_vs_n",
    "qq": "qq_invariance",
    "clt-qq": "clt_qq",
    "pr-compare": "pr_vs_tailpr",
    "reward-sweep": "reward_sweep",
    "bounds-check": "bounds_check",
    "bootstrap": "bootstrap_coverage",
}


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    g.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
    g.add_argument("--out", default=None, help="output directory (default: config 'out' or out/<kind>)")
    g.add_argument("--format", choices=FORMATS, default="all", help="which outputs to write")
    g.add_argument("--check", action="store_true", help="exit with status 4 if any built-in check fails")
    g.add_argument("--quiet", action="store_true", help="only print failures")
    return p


def _override_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config to start from instead of the built-in defaults")
    p.add_argument("--B", type=int, help="Monte-Carlo replicates")
    p.add_argument("--n", type=int, help="horizon")
    p.add_argument("--n-grid", help="comma-separated horizons, ascending")
    p.add_argument("--schedule", action="append", help="schedule such as pd2z:0.05,1 (repeatable)")
    p.add_argument("--gamma", type=float, help="gridworld discount factor")
    p.add_argument("--nu", type=float, help="tail-window exponent for non-pd2z schedules")
    p.add_argument("--c", type=float, help="tail-window constant")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="set an experiment option; VALUE is parsed as YAML (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parent = _global_flags()
    parser = argparse.ArgumentParser(prog="qdecay", description=__doc__, parents=[parent])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[parent], help="run the experiment described by a config file")
    run.add_argument("config", help="YAML experiment config")
    for name, kind in SUBCOMMANDS.items():
        sp = sub.add_parser(name, parents=[parent], help=f"run the {kind} experiment")
        _override_flags(sp)
    return parser


def _config_from_args(args) -> ExperimentConfig:
    if args.command == "run":
        return load_config(args.config)
    kind = SUBCOMMANDS[args.command]
    cfg = load_config(args.config) if args.config else default_config(kind)
    if cfg.kind != kind:
        raise ConfigError(f"config describes {cfg.kind!r}, not {kind!r}")
    data = cfg.to_dict()
    if args.B is not None:
        data["B"] = args.B
    if args.n is not None:
        data["n"] = args.n
    if args.n_grid:
        try:
            data["n_grid"] = [int(v) for v in args.n_grid.split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad --n-grid {args.n_grid!r}") from exc
    if args.schedule:
        data["schedules"] = args.schedule
    if args.gamma is not None:
        data["mdp"] = {"gridworld": {**data["mdp"].get("gridworld", {}), "gamma": args.gamma}}
    for key in ("nu", "c"):
        if getattr(args, key) is not None:
            data[key] = getattr(args, key)
    options = dict(data.get("options") or {})
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        options[key] = yaml.safe_load(value)
    data["options"] = options
    return ExperimentConfig.from_dict(data)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    try:
        cfg = _config_from_args(args)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        report = run_experiment(cfg, threads=args.threads)
        out = Path(args.out or cfg.out or f"out/{cfg.kind}")
        emit_outputs(report, out, args.format)
        info = {
            "started": started.isoformat(),
            "elapsed_seconds": round(time.perf_counter() - t0, 3),
            "threads": args.threads,
            "argv": list(sys.argv[1:] if argv is None else argv),
        }
        (out / "run_info.json").write_text(json.dumps(info, indent=2) + "\n")
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailureError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OutputError, OSError) as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return 1
    except QDecayError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    for c in report.checks:
        if not (args.quiet and c.passed):
            print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  value={c.value}  target {c.target}")
    if "lemma_violations" in report.scalars:
        print(f"lemma violations: {report.scalars['lemma_violations']}")
    print(f"wrote {out}")
    if args.check and not report.passed:
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
