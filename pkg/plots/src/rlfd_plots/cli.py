"""rlfd-plot: regenerate figures from an experiment artifact directory."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from rlfd_plots import FIGURE_KINDS
from rlfd_plots.figures import available_kinds, render
from rlfd_plots.manifest import SchemaError, load_manifest


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="rlfd-plot",
        description="Render figures from a manifest and its CSV artifacts",
    )
    parser.add_argument("manifest", type=Path)
    parser.add_argument(
        "--figures", default="all",
        help="'all' or a comma-separated subset of: " + ", ".join(FIGURE_KINDS),
    )
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--format", choices=("png", "svg"), default="svg")
    args = parser.parse_args(argv)

    try:
        manifest = load_manifest(args.manifest)
        if args.figures == "all":
            kinds = available_kinds(manifest)
        else:
            kinds = [k.strip() for k in args.figures.split(",") if k.strip()]
            for kind in kinds:
                if kind not in FIGURE_KINDS:
                    raise SchemaError(f"unknown figure kind {kind!r}")
        written = []
        for kind in kinds:
            paths = render(manifest, kind, args.out, fmt=args.format)
            if args.figures != "all" and not paths:
                raise SchemaError(f"no artifacts in the manifest match {kind!r}")
            written.extend(paths)
        for path in written:
            print(path)
        return 0
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
