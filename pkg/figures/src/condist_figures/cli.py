"""``figure <kind> --in data.csv --out figure.png`` command line.

Exits nonzero with a column-level message when the input does not match
the kind's schema.
"""

from __future__ import annotations

import argparse
import sys

from .render import RENDERERS, SchemaError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="figure",
                                     description="render condist CSV outputs")
    parser.add_argument("kind", choices=sorted(RENDERERS))
    parser.add_argument("--in", dest="in_path", required=True)
    parser.add_argument("--out", dest="out_path", required=True)
    parser.add_argument("--title", default=None)
    parser.add_argument("--bins", type=int, default=20,
                        help="histogram kind: number of bins")
    parser.add_argument("--bin-max", type=float, default=0.1,
                        help="histogram kind: upper edge (overflow folds into "
                             "the rightmost bin)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    render = RENDERERS[args.kind]
    kwargs = {"title": args.title}
    if args.kind == "histogram":
        kwargs.update(bins=args.bins, bin_range=(0.0, args.bin_max))
    try:
        render(args.in_path, args.out_path, **kwargs)
    except SchemaError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: cannot write output: {err}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
