"""Command-line front end: single runs and the three study drivers."""

from __future__ import annotations

import argparse
import sys

from . import harness
from .harness import ConfigError


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ksweep",
                                 description="Implicit kinetic solver runs and studies")
    sub = ap.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="execute one configured simulation")
    runp.add_argument("--config", required=True)
    runp.add_argument("--solver", dest="method",
                      choices=["nls-pic", "nls-aa", "nest-pic", "nest-aa"])
    runp.add_argument("--ddsa", action="store_true", default=None)
    runp.add_argument("--eps", type=float)
    runp.add_argument("--dt", type=float)
    runp.add_argument("--out", dest="out_dir")
    runp.add_argument("--nx", type=int)
    runp.add_argument("--nv", type=int)
    runp.add_argument("--scheme", choices=["euler", "bdf2"])
    runp.add_argument("--tf", dest="t_final", type=float)

    studyp = sub.add_parser("study", help="run a multi-cell experiment")
    studyp.add_argument("kind", choices=["efficiency", "convergence", "contraction"])
    studyp.add_argument("--config", required=True)
    studyp.add_argument("--out", dest="out_dir", required=True)
    studyp.add_argument("--levels", default="4-6",
                        help="convergence study levels, e.g. 1-6")
    studyp.add_argument("--ladder", default="1-8",
                        help="efficiency ladder exponents k in dt = T_f/2^k")
    studyp.add_argument("--eps-list", default="0.005,0.002",
                        help="contraction study eps values")
    studyp.add_argument("--dt", type=float, default=0.0025,
                        help="contraction study timestep")
    studyp.add_argument("--methods", default=",".join(harness.STUDY_METHODS))
    studyp.add_argument("--nx", type=int)
    studyp.add_argument("--nv", type=int)
    return ap


def _parse_range(text: str) -> range:
    lo, _, hi = text.partition("-")
    return range(int(lo), int(hi or lo) + 1)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            code, result = harness.run(
                args.config, out_dir=args.out_dir, method=args.method,
                ddsa=args.ddsa, eps=args.eps, dt=args.dt, nx=args.nx,
                nv=args.nv, scheme=args.scheme, t_final=args.t_final)
            print(f"status={result.status} steps={len(result.records)} "
                  f"sweeps={result.total_sweeps}")
            return code
        spec = harness.load_config(args.config)
        if args.nx is not None:
            spec.nx = args.nx
        if args.nv is not None:
            spec.nv = args.nv
        if args.kind == "efficiency":
            methods = args.methods.split(",")
            path = harness.efficiency_matrix(spec, args.out_dir, methods,
                                             _parse_range(args.ladder))
        elif args.kind == "convergence":
            path = harness.convergence_study(spec, args.out_dir,
                                             _parse_range(args.levels))
        else:
            eps_list = [float(s) for s in args.eps_list.split(",")]
            methods = args.methods.split(",")
            path = harness.contraction_study(spec, args.out_dir, eps_list,
                                             dt=args.dt, methods=methods)
        print(f"wrote {path}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
