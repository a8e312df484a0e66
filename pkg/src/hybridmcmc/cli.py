"""Command-line entry point: ``hybridmcmc run|presets|diagnose``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import get_preset, list_presets, load_config, with_overrides
from .errors import ConfigurationError, StartupError
from .harness import diagnose_states, read_chain_csv, write_acf_csv, write_diagnostics_csv


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridmcmc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a preset or a config file")
    run.add_argument("config", nargs="?", help="config file (.ini-style or JSON summary)")
    run.add_argument("--preset", help="preset name (see 'presets')")
    run.add_argument("--seed", type=int)
    run.add_argument("--samples", type=int, help="adaptive-phase samples per chain")
    run.add_argument("--prerun", type=int, help="pCN pre-run length")
    run.add_argument("--paper-scale", action="store_true", help="5e5 samples + 5e4 pre-run")
    run.add_argument("--grid-points", type=int)
    run.add_argument("--out", help="output directory")

    sub.add_parser("presets", help="list the built-in experiments")

    diag = sub.add_parser("diagnose", help="diagnostics for a chain CSV")
    diag.add_argument("chain", help="chain_<sampler>.csv written by 'run'")
    diag.add_argument("--acf-lag", type=int, default=100)
    diag.add_argument("--points", type=float, nargs="*", default=[0.4, 0.8],
                      help="grid coordinates for the per-lag ACF table")
    diag.add_argument("--out", help="diagnostics CSV path (default: stdout)")
    diag.add_argument("--acf-out", help="per-lag ACF CSV path")
    return parser


def _cmd_run(args) -> int:
    if (args.config is None) == (args.preset is None):
        raise ConfigurationError("give exactly one of a config file or --preset")
    cfg = load_config(args.config) if args.config else get_preset(args.preset).config
    cfg = with_overrides(cfg, seed=args.seed, samples=args.samples, prerun=args.prerun,
                         paper_scale=args.paper_scale, grid_points=args.grid_points, out=args.out)
    if args.out is None and args.preset:
        cfg = with_overrides(cfg, out=Path("runs") / args.preset)
    from .harness import run_experiment

    summary = run_experiment(cfg)
    out = {k: {"beta": v["beta"], "acceptance_rate": v["acceptance_rate"],
               "median_ess_per_100": v["ess_per_100"]["median"]}
           for k, v in summary["samplers"].items()}
    print(json.dumps({"out": cfg.output.dir, "samplers": out, "comparisons": summary["comparisons"]},
                     indent=2))
    return 0


def _cmd_presets(_args) -> int:
    rows = list_presets()
    width = max(len(name) for name, _ in rows)
    for name, source in rows:
        print(f"{name:<{width}}  {source}")
    return 0


def _cmd_diagnose(args) -> int:
    _, states, x = read_chain_csv(args.chain)
    diag = diagnose_states(states, x, args.acf_lag, args.points)
    lag = min(args.acf_lag, states.shape[0] - 1)
    if args.out:
        write_diagnostics_csv(args.out, diag, lag)
    else:
        np.savetxt(sys.stdout, np.column_stack([diag.x, diag.acf_lag, diag.ess_per_100, diag.mean,
                                                diag.variance]),
                   fmt="%.17g", delimiter=",", header=f"x,acf_lag{lag},ess_per_100,mean,variance",
                   comments="")
    if args.acf_out:
        write_acf_csv(args.acf_out, diag)
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "presets": _cmd_presets, "diagnose": _cmd_diagnose}
    try:
        return handlers[args.command](args)
    except (ConfigurationError, StartupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
