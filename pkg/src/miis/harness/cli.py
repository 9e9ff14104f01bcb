"""Command-line entry point.

Subcommands: ``run`` executes a config and writes the report files;
``simulate-mmpp`` writes an event-time file; ``summarize`` re-renders a
written bundle after verifying it; ``oracle-check`` runs the exact
stationarity suite. Config problems exit with 2 and a field path,
runtime failures with 1.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from ..core import MiisError
from ..models import mmpp, oracle
from ..rng import substream
from .config import ConfigError, load_config
from .errors import HarnessError

__all__ = ["main"]

ORACLE_TOL = 1e-10


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="miis",
        description="Replicated Monte Carlo experiments with interacting importance samplers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config and write its report")
    run.add_argument("config", help="path to a JSON experiment config")
    run.add_argument("--threads", type=int, default=None, help="worker processes (overrides the config)")
    run.add_argument("--seed", type=int, default=None, help="base seed (overrides the config)")
    run.add_argument("--no-figures", action="store_true", help="skip the PNG rendering")

    sim = sub.add_parser("simulate-mmpp", help="simulate an event-time file")
    sim.add_argument("--psi", required=True, help="intensities, e.g. 10,17")
    sim.add_argument("--q", required=True, help="switching rates, e.g. 1,1")
    sim.add_argument("--window", type=float, required=True, help="observation window in seconds")
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--out", required=True, help="output file path")

    summ = sub.add_parser("summarize", help="verify and print a written result bundle")
    summ.add_argument("bundle", help="bundle.json or the directory holding it")

    sub.add_parser("oracle-check", help="exact stationarity checks on the discrete kernels")
    return parser


def _parse_pair(text: str, flag: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 2:
        raise HarnessError(f"{flag} expects two comma-separated numbers, got {text!r}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as exc:
        raise HarnessError(f"{flag}: {exc}") from exc


def _cmd_run(args) -> int:
    from . import figures, report, runner

    cfg = load_config(args.config)
    bundle = runner.run_experiment(cfg, threads=args.threads, base_seed=args.seed)
    paths = report.write_outputs(bundle, cfg.output_dir)
    if not args.no_figures:
        paths.update(figures.render_figures(bundle, cfg.output_dir))
    for name in ("csv", "bundle", "relative_mse", "diagnostics"):
        if name in paths:
            print(f"wrote {paths[name]}")
    failures = bundle.get("failures", [])
    if failures:
        print(f"{len(failures)} chain(s) failed:", file=sys.stderr)
        for item in failures:
            print(
                f"  dataset {item['dataset']} method {item['method']}"
                f" replication {item['replication']}: {item['error']}",
                file=sys.stderr,
            )
        return 1
    return 0


def _cmd_simulate(args) -> int:
    psi = _parse_pair(args.psi, "--psi")
    q = _parse_pair(args.q, "--q")
    if args.window <= 0:
        raise HarnessError("--window must be positive")
    model = mmpp.MmppModel(
        n_states=2,
        psi=psi,
        q=q,
        prior_means=np.concatenate([psi, q]),
        window=args.window,
    )
    times = mmpp.simulate_mmpp(model, substream(args.seed, "dataset", 0))
    mmpp.write_event_times(args.out, times, window=args.window)
    print(f"wrote {args.out} ({times.size} events over {args.window:g}s)")
    return 0


def _cmd_summarize(args) -> int:
    from . import report

    _, text = report.summarize_bundle(args.bundle)
    print(text)
    return 0


def _cmd_oracle_check() -> int:
    worst = 0.0
    failed = False
    for name, kernel, expected in oracle.standard_check_cases():
        row_err = float(np.max(np.abs(kernel.sum(axis=1) - 1.0)))
        stat_err = float(np.max(np.abs(oracle.stationary_of(kernel) - expected)))
        worst = max(worst, row_err, stat_err)
        ok = row_err <= ORACLE_TOL and stat_err <= ORACLE_TOL
        failed = failed or not ok
        print(
            f"{name}: row-sum deviation {row_err:.2e},"
            f" stationary deviation {stat_err:.2e} {'ok' if ok else 'FAIL'}"
        )
    print(f"worst deviation {worst:.2e} (tolerance {ORACLE_TOL:.0e})")
    return 1 if failed else 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "simulate-mmpp":
            return _cmd_simulate(args)
        if args.command == "summarize":
            return _cmd_summarize(args)
        return _cmd_oracle_check()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MiisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
