"""ksweep-plot: render a figure from harness CSV artifacts."""

from __future__ import annotations

import argparse
import sys

from .figures import KINDS, FigureSpec, SchemaError, render


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="ksweep-plot",
                                 description="plot solver CSV artifacts")
    ap.add_argument("--kind", required=True, choices=KINDS)
    ap.add_argument("--in", dest="inputs", nargs="+", required=True,
                    metavar="CSV")
    ap.add_argument("--out", required=True, metavar="IMG")
    ap.add_argument("--kappa", type=float, default=None,
                    help="analytic contraction factor reference line")
    args = ap.parse_args(argv)
    try:
        out = render(FigureSpec(args.inputs, args.kind, args.out, args.kappa))
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
