"""Command-line entry points: run experiments, validate configs, export MDPs.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from rlfd.experiments import (
    ConfigError,
    export_mdp,
    load_config,
    run_experiment,
)
from rlfd.smd import NumericalError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rlfd",
        description="Inverse-optimization apprenticeship learning experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config", type=Path)
    run.add_argument("--out", type=Path, default=None, help="artifact directory")
    run.add_argument("--seed", type=int, default=None, help="override base_seed")
    run.add_argument("--workers", type=int, default=1, help="parallel run workers")
    run.add_argument("--preset", choices=("paper", "desk"), default=None)

    validate = sub.add_parser("validate", help="check a config without running it")
    validate.add_argument("config", type=Path)
    validate.add_argument("--preset", choices=("paper", "desk"), default=None)

    export = sub.add_parser("export-mdp", help="write the configured MDP as JSON")
    export.add_argument("config", type=Path)
    export.add_argument("-o", "--output", type=Path, required=True)
    export.add_argument("--preset", choices=("paper", "desk"), default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, preset=args.preset)
        if args.command == "validate":
            print(f"ok: {args.config} ({cfg.kind})")
            return 0
        if args.command == "export-mdp":
            args.output.parent.mkdir(parents=True, exist_ok=True)
            args.output.write_text(export_mdp(cfg) + "\n")
            print(f"wrote {args.output}")
            return 0
        if args.seed is not None:
            from dataclasses import replace

            cfg = replace(cfg, base_seed=args.seed)
        root = run_experiment(cfg, out_dir=args.out, workers=args.workers)
        print(f"artifacts written to {root}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
