"""Command-line entry point.

Precedence for run parameters: built-in scenario or JSON file first, then any
flag given on the command line (``--duration``, ``--gamma``, ``--noise-scale``,
``--seed``) overrides the corresponding value.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from .harness import CONTROLLERS, SimulationError, run_batch, run_closed_loop, write_csv, write_summary
from .scenarios import SCENARIO_NAMES, ConfigError, UnknownScenarioError, config_to_dict, load_config, resolve_scenario

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SIM = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_seeds(text: str) -> list[int]:
    """``a..b`` (inclusive) or a comma-separated list."""
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise UsageError(f"empty seed range {text!r}")
            return list(range(lo, hi + 1))
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"bad seed list {text!r}") from exc


def _common(p):
    p.add_argument("--scenario", required=True, help="built-in name or path to a JSON config")
    p.add_argument("--controller", default="re_cbf", choices=CONTROLLERS)
    p.add_argument("--duration", type=float, help="override duration [s]")
    p.add_argument("--gamma", type=float, help="override the alpha_3 gain")
    p.add_argument("--noise-scale", type=float, dest="noise_scale", help="override noise scale")
    p.add_argument("--no-plots", action="store_true", help="skip the PNG figures")
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="recbf",
        description="Resilient-estimator CBF quadrotor simulations.",
        epilog="Flags override values read from a JSON scenario file.",
    )
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("run", help="simulate one seed and write the trajectory CSV")
    _common(p)
    p.add_argument("--seed", type=int, help="override the seed")
    p.add_argument("--out", help="trajectory CSV path")

    p = sub.add_parser("batch", help="simulate a range of seeds and write a summary CSV")
    _common(p)
    p.add_argument("--seeds", default="0..19", help="a..b inclusive, or a comma list")
    p.add_argument("--summary", help="summary CSV path")
    p.add_argument("--workers", type=int, default=1)

    sub.add_parser("scenarios", help="list built-in scenarios")

    p = sub.add_parser("validate", help="check a JSON scenario file")
    p.add_argument("config")
    return parser


def _config(args):
    cfg = resolve_scenario(args.scenario)
    over = {}
    if args.duration is not None:
        over["duration"] = args.duration
    if args.gamma is not None:
        over["gamma"] = args.gamma
    if args.noise_scale is not None:
        over["noise_scale"] = args.noise_scale
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            raise UsageError("seed must be non-negative")
        over["seed"] = args.seed
    try:
        return replace(cfg, **over) if over else cfg
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _cmd_run(args, out) -> int:
    cfg = _config(args)
    records, m = run_closed_loop(cfg, args.controller)
    if args.out:
        write_csv(records, args.out)
        if not args.no_plots:
            from .report import plot_run

            plot_run(records, cfg, args.out)
    if not args.quiet:
        print(
            f"{cfg.name} {args.controller} seed={m.seed} min_h={m.min_h:.4f} "
            f"violations={m.violation_steps} max_z={m.max_altitude:.4f}",
            file=out,
        )
    return EXIT_OK


def _cmd_batch(args, out) -> int:
    cfg = _config(args)
    seeds = parse_seeds(args.seeds)
    if not seeds:
        raise UsageError("no seeds given")
    metrics = run_batch(cfg, args.controller, seeds, workers=args.workers)
    if args.summary:
        write_summary(metrics, args.summary)
        if not args.no_plots:
            from .report import plot_summary

            plot_summary(metrics, args.summary)
    failed = [m for m in metrics if m.error]
    if not args.quiet:
        for m in metrics:
            tail = f" error={m.error}" if m.error else ""
            print(f"seed={m.seed} min_h={m.min_h:.4f} max_z={m.max_altitude:.4f}{tail}", file=out)
    return EXIT_SIM if failed else EXIT_OK


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: run, batch, scenarios, validate")
        logging.basicConfig(level=logging.WARNING)
        if args.command == "scenarios":
            for name in SCENARIO_NAMES:
                print(name, file=out)
            return EXIT_OK
        if args.command == "validate":
            cfg = load_config(args.config)
            print(json.dumps(config_to_dict(cfg), indent=2), file=out)
            return EXIT_OK
        if args.command == "run":
            return _cmd_run(args, out)
        return _cmd_batch(args, out)
    except (UsageError, UnknownScenarioError, ConfigError, FileNotFoundError) as exc:
        print(f"recbf: error: {exc}", file=err)
        return EXIT_USAGE
    except (SimulationError, ArithmeticError) as exc:
        print(f"recbf: simulation failed: {exc}", file=err)
        return EXIT_SIM
    except OSError as exc:
        print(f"recbf: error: {exc}", file=err)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
