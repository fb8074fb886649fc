"""Command-line figure generation: apl-plot <kind> --in <files> --out <image>."""

from __future__ import annotations

import argparse
import sys

from .plotting import PLOT_KINDS, PlotSpec, SchemaError, make_plot


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="apl-plot",
        description="Render experiment figures from CSV / JSON-lines outputs")
    parser.add_argument("kind", choices=sorted(PLOT_KINDS))
    parser.add_argument("--in", dest="inputs", nargs="+", required=True,
                        metavar="PATH", help="input data file(s)")
    parser.add_argument("--out", required=True,
                        help="output image path (.png or .svg)")
    parser.add_argument("--episode", type=int, default=0,
                        help="episode index for attention-bars / trajectory-3d")
    args = parser.parse_args(argv)
    spec = PlotSpec(args.kind, tuple(args.inputs), args.out,
                    {"episode": args.episode})
    try:
        make_plot(spec)
    except SchemaError as e:
        print(f"schema error: {e}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
