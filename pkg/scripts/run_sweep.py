"""
Command-line driver for convergence sweeps

    python scripts/run_sweep.py --problem example1 --k 2 --N 8,16,32,64 --eps2 1e-10
"""
import argparse
import sys
import os
from typing import List, Optional

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from pydantic import ValidationError

from config import config
from services.problem_service import PROBLEMS
from services.sweep_service import RunConfig, SweepService


def _int_list(text: str) -> List[int]:
    return [int(item) for item in text.split(",") if item.strip()]


def _float_list(text: str) -> List[float]:
    return [float(item) for item in text.split(",") if item.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Weak Galerkin sweeps on Shishkin meshes")
    parser.add_argument("--problem", default="example1", choices=sorted(PROBLEMS))
    parser.add_argument("--k", type=int, default=config.WG_DEGREE, choices=config.SUPPORTED_DEGREES)
    parser.add_argument("--N", type=_int_list, default=list(config.WG_DEFAULT_N),
                        help="comma separated doubling list, e.g. 4,8,16")
    parser.add_argument("--eps2", type=_float_list, default=list(config.WG_DEFAULT_EPS2),
                        help="comma separated eps^2 values, e.g. 1e-6,1e-10")
    parser.add_argument("--lambda", dest="lam", type=float, default=None,
                        help="Shishkin grading constant (default k + 1)")
    parser.add_argument("--solver", default=config.WG_SOLVER_METHOD, choices=config.SUPPORTED_SOLVERS)
    parser.add_argument("--tol", type=float, default=config.WG_SOLVER_TOL)
    parser.add_argument("--quad-tri-degree", type=int, default=None)
    parser.add_argument("--quad-edge-points", type=int, default=None)
    parser.add_argument("--out", default=config.WG_OUTPUT_DIR)
    parser.add_argument("--format", dest="formats", default="table,csv,json",
                        help=f"comma separated subset of {','.join(config.SUPPORTED_FORMATS)}")
    parser.add_argument("--dump-matrix", action="store_true",
                        help="write the reduced matrix of every cell in MatrixMarket format")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    config.validate()

    try:
        run = RunConfig(
            problem=args.problem,
            k=args.k,
            N=args.N,
            eps2=args.eps2,
            lam=args.lam,
            solver=args.solver,
            tol=args.tol,
            quad_tri_degree=args.quad_tri_degree,
            quad_edge_points=args.quad_edge_points,
            out=args.out,
            formats=[item.strip() for item in args.formats.split(",") if item.strip()],
            dump_matrix=args.dump_matrix,
        )
    except ValidationError as e:
        print(f"❌ Invalid run configuration:\n{e}", file=sys.stderr)
        return 2

    report = SweepService.run_sweep(run)

    for mode in ("discrete", "exact"):
        print(SweepService.format_table(report, mode))
    for kind, path in report.paths.items():
        print(f"📄 {kind}: {path}")

    if report.failures:
        print(f"\n❌ {len(report.failures)} cell(s) failed:", file=sys.stderr)
        for row in report.failures:
            print(f"  eps^2={row['eps2']:g} N={row['N']} k={row['k']}: "
                  f"{row['error']['error']}: {row['error']['message']}", file=sys.stderr)
        return 1

    print("✅ Sweep complete")
    return 0


if __name__ == "__main__":
    sys.exit(main())
