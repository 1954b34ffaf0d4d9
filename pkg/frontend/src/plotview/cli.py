"""Command-line interface.

    plotview FIGURE_SPEC.json --out figure.png

The output format follows the file extension (png, svg, pdf).  Exit
codes: 0 success, 2 bad figure spec or bad input data.
"""

from __future__ import annotations

import argparse
import sys

from plotview.figspec import FigureSpecError, load_figure_spec
from plotview.render import render
from plotview.schema import SchemaError


def build_parser():
    parser = argparse.ArgumentParser(
        prog="plotview",
        description="Render simulator CSV outputs into figures")
    parser.add_argument("figure_spec", help="path to a figure spec JSON file")
    parser.add_argument("--out", required=True,
                        help="output image path (.png, .svg, or .pdf)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        spec = load_figure_spec(args.figure_spec)
        report = render(spec, args.out)
    except (FigureSpecError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {report.out_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
