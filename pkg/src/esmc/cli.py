"""Command line interface: run experiments and render reports.

Two subcommands.  ``esmc run`` executes an experiment (a preset, a YAML
config, or an ad hoc single run built from flags) and writes chain CSVs plus
``summary.json``.  ``esmc report`` reads such a directory and renders PNG
figures and derived CSV tables next to the raw output.

Exit codes: 0 success, 1 configuration or usage error, 2 input/output error,
3 numeric failure while sampling.  Set ESMC_LOG=info (or debug) for progress
messages on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .core import EvaluationError
from .experiments import (
    ConfigError,
    ExperimentConfig,
    ReportSpec,
    RunSpec,
    load_config,
    make_preset,
    preset_names,
    run_experiment,
)
from .integrators import IntegratorError
from .samplers import SamplerError
from .targets import target_names

log = logging.getLogger("esmc")


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports problems as ConfigError instead of exiting."""

    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="esmc",
        description="Energy-stepping Monte Carlo experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write chains + summary.json")
    src = run.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=preset_names(),
                     help="built-in experiment configuration")
    src.add_argument("--config", metavar="FILE", help="YAML experiment configuration")
    run.add_argument("--out", required=True, metavar="DIR", help="output directory")
    run.add_argument("--seed", type=int, default=0, help="experiment seed (default 0)")
    run.add_argument("--emit-trace", action="store_true",
                     help="also write segment-level event CSVs for energy-stepping runs")
    run.add_argument("--threads", type=int, default=1,
                     help="worker processes for chains (default 1)")
    adhoc = run.add_argument_group("ad hoc run (instead of --preset/--config)")
    adhoc.add_argument("--target", choices=target_names())
    adhoc.add_argument("--dim", type=int, help="target dimension, when configurable")
    adhoc.add_argument("--sampler", choices=("rwmc", "hmc", "esmc"))
    adhoc.add_argument("--chains", type=int, default=1)
    adhoc.add_argument("--samples", type=int, default=1000)
    adhoc.add_argument("--burn-in", type=float, default=0.1,
                       help="burn-in fraction in [0, 1) (default 0.1)")
    adhoc.add_argument("--init", choices=("standard_normal", "target_exact"),
                       default="standard_normal")
    adhoc.add_argument("--h", type=float, help="energy step for the esmc sampler")
    adhoc.add_argument("--T", type=float, help="proposal duration for hmc/esmc")
    adhoc.add_argument("--dt", type=float, help="leapfrog step for the hmc sampler")
    adhoc.add_argument("--proposal-var", type=float,
                       help="proposal variance for the rwmc sampler")
    adhoc.add_argument("--kl-bins", type=float, nargs=3, metavar=("LO", "HI", "COUNT"),
                       help="histogram window for the divergence diagnostic (1-D targets)")
    adhoc.add_argument("--sectors", type=int,
                       help="angular sectors for the symmetry diagnostic (2-D targets)")
    adhoc.add_argument("--max-lag", type=int, default=50,
                       help="autocorrelation lags to record (default 50)")

    rep = sub.add_parser("report", help="render figures and derived CSVs for a run")
    rep.add_argument("--run", required=True, metavar="DIR",
                     help="directory containing summary.json")
    rep.add_argument("--out", metavar="DIR",
                     help="where to write the report files (default: the run directory)")

    lst = sub.add_parser("list", help="list available targets and presets")
    lst.add_argument("--json", action="store_true", help="machine-readable output")
    return parser


def _adhoc_config(args) -> ExperimentConfig:
    if args.target is None or args.sampler is None:
        raise ConfigError("provide --preset, --config, or both --target and --sampler")
    if args.sampler == "rwmc":
        if args.proposal_var is None:
            raise ConfigError("rwmc needs --proposal-var")
        sampler_params = {"proposal_cov": args.proposal_var}
    elif args.sampler == "hmc":
        if args.dt is None or args.T is None:
            raise ConfigError("hmc needs --dt and --T")
        sampler_params = {"dt": args.dt, "T": args.T}
    else:
        if args.h is None or args.T is None:
            raise ConfigError("esmc needs --h and --T")
        sampler_params = {"h": args.h, "T": args.T}
    target_params = {} if args.dim is None else {"dim": args.dim}
    run = RunSpec(
        label=args.sampler,
        target=args.target,
        target_params=target_params,
        sampler=args.sampler,
        sampler_params=sampler_params,
        n_chains=args.chains,
        n_samples=args.samples,
        burn_in_fraction=args.burn_in,
        init=args.init,
    )
    if args.kl_bins:
        lo, hi, count = args.kl_bins
        kl_bins = (float(lo), float(hi), int(count))
    else:
        kl_bins = None
    report = ReportSpec(
        kind="auto",
        max_lag=args.max_lag,
        kl_bins=kl_bins,
        sectors=args.sectors,
    )
    name = f"{args.target}_{args.sampler}"
    return ExperimentConfig(name, [run], report, seed=args.seed)


def _cmd_run(args) -> int:
    if args.preset:
        config = make_preset(args.preset, seed=args.seed)
    elif args.config:
        config = load_config(args.config)
        config.seed = args.seed if args.seed else config.seed
    else:
        config = _adhoc_config(args)
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    summary = run_experiment(
        config, args.out, emit_trace=args.emit_trace, threads=args.threads,
    )
    n_runs = len(summary["runs"])
    print(f"wrote {n_runs} run{'s' if n_runs != 1 else ''} to {args.out}")
    return 0


def _cmd_report(args) -> int:
    from .plots import render_report

    paths = render_report(args.run, args.out)
    print(f"wrote {len(paths)} report files to {args.out or args.run}")
    return 0


def _cmd_list(args) -> int:
    if args.json:
        print(json.dumps({"targets": list(target_names()),
                          "presets": list(preset_names())}, indent=2))
    else:
        print("targets:", ", ".join(target_names()))
        print("presets:", ", ".join(preset_names()))
    return 0


def _setup_logging() -> None:
    level_name = os.environ.get("ESMC_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
    )


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "report":
            return _cmd_report(args)
        return _cmd_list(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (IntegratorError, SamplerError, EvaluationError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
