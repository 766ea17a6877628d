"""Command-line entry points: simulate, experiment, summarize.

Exit codes: 0 success, 1 configuration error, 2 runtime/solver error,
3 I/O error.
"""

from __future__ import annotations

import argparse
import sys

from .errors import CdaError, ConfigurationError, NoEquilibriumError
from .market import MarketConfig
from .engine import run
from . import persist
from .experiment import (ExperimentSpec, format_summary_table, get_preset,
                         presets, run_experiment, summarize)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_IO = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are configuration errors
        self.print_usage(sys.stderr)
        raise ConfigurationError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="cdamarket",
                     description="Double auction market simulator and analysis toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one market and write its run directory")
    sim.add_argument("--preset", help="take the market config from this experiment preset")
    sim.add_argument("--spec", help="market config JSON (or an experiment spec JSON)")
    sim.add_argument("--seed", type=int, help="override the config seed")
    sim.add_argument("--out", required=True, help="output run directory")

    exp = sub.add_parser("experiment", help="run a replica ensemble with analyses")
    exp.add_argument("--preset", help="name of a shipped experiment preset")
    exp.add_argument("--spec", help="experiment spec JSON file")
    exp.add_argument("--seed", type=int, help="override the base seed")
    exp.add_argument("--out", help="output directory (default: the experiment name)")
    exp.add_argument("--threads", type=int, default=1,
                     help="replica-level parallelism (default 1)")
    exp.add_argument("--list", action="store_true", help="list preset names and exit")

    summ = sub.add_parser("summarize", help="merge fits from experiment directories")
    summ.add_argument("dirs", nargs="*", help="experiment output directories")
    return parser


def _market_config_from_args(args) -> MarketConfig:
    from dataclasses import replace
    if args.preset and args.spec:
        raise ConfigurationError("give either --preset or --spec, not both")
    if args.preset:
        config = get_preset(args.preset).market
    elif args.spec:
        payload = persist.read_json(args.spec)
        if "market" in payload:
            config = ExperimentSpec.from_dict(payload).market
        else:
            config = MarketConfig.from_dict(payload)
    else:
        raise ConfigurationError("simulate needs --preset or --spec")
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    return config


def _cmd_simulate(args) -> int:
    config = _market_config_from_args(args)
    log = run(config)
    persist.save_log(log, args.out, write_shouts=True)
    print(f"wrote run directory {args.out} ({len(log.trades)} trades, "
          f"{len(log.shouts)} shouts)")
    return EXIT_OK


def _cmd_experiment(args) -> int:
    if args.list:
        for spec in presets():
            print(f"{spec.name}: model={spec.market.model} days={spec.market.n_days} "
                  f"rounds={spec.market.rounds_per_day} replicas={spec.replicas} "
                  f"analyses={','.join(spec.analyses)}")
        return EXIT_OK
    if bool(args.preset) == bool(args.spec):
        raise ConfigurationError("give exactly one of --preset or --spec")
    if args.preset:
        spec = get_preset(args.preset)
    else:
        spec = ExperimentSpec.from_dict(persist.read_json(args.spec))
    if args.seed is not None:
        spec = ExperimentSpec.from_dict({**spec.to_dict(),
                                         "market": {**spec.market.to_dict(), "seed": args.seed}})
    result = run_experiment(spec, out_dir=args.out, threads=args.threads)
    print(f"experiment {result.name}: wrote {result.output_dir}")
    for name, fit in result.fits.items():
        if "exponent" in fit:
            print(f"  {name}: exponent {fit['exponent']:.3f} ± {fit['stderr']:.3f} "
                  f"(r2 {fit['r_squared']:.3f})")
    for name, reason in result.skipped.items():
        print(f"  {name}: skipped ({reason})")
    return EXIT_OK


def _cmd_summarize(args) -> int:
    rows = summarize(args.dirs)
    sys.stdout.write(format_summary_table(rows))
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "experiment":
            return _cmd_experiment(args)
        return _cmd_summarize(args)
    except (ConfigurationError, NoEquilibriumError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CdaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
