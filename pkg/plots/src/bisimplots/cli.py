"""Command-line entry: `plots render-all --in <dir> --out <dir> --format png|svg`."""

from __future__ import annotations

import argparse
import sys

from .figures import FigureError, render_all


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="plots", description="render experiment figures")
    sub = parser.add_subparsers(dest="command", required=True)
    ra = sub.add_parser("render-all", help="render the standard figure set")
    ra.add_argument("--in", dest="in_dir", required=True)
    ra.add_argument("--out", dest="out_dir", required=True)
    ra.add_argument("--format", dest="fmt", default="png", choices=["png", "svg"])
    args = parser.parse_args(argv)
    try:
        outputs = render_all(args.in_dir, args.out_dir, args.fmt)
    except FigureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in outputs:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
