"""
Sweep Service - convergence sweeps over (eps^2, N) and their reports

One cell = build mesh, assemble, solve, measure |||I_h u - u_N|||_M and
|||u - u_N|||_M. A sweep runs every cell of a RunConfig, keeps going past
failed cells and writes the table, CSV and JSON reports in config order.
"""
import asyncio
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import config
from services.assembly_service import AssemblyService
from services.errors import WGError
from services.export_service import ExportService, write_atomic
from services.mesh_service import MeshParams, MeshService
from services.norm_service import NormService
from services.problem_service import PROBLEMS, ProblemService
from services.solver_logger import SolverLogger
from services.solver_service import SolverService

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "wg-sweep/1"

# Errors at or below this level are reported as exact rather than given an order
EXACT_ERROR = 1e-8

NORM_COLUMNS = {
    "discrete": "|||I_h u - u_N|||_M",
    "exact": "|||u - u_N|||_M",
}

# Row key per order column; "bound" is the constant-free uniform error bound
ORDER_KEYS = {
    "discrete": "error_discrete",
    "exact": "error_exact",
    "bound": "bound",
}


class RunConfig(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    problem: str = "example1"
    k: int = Field(default_factory=lambda: config.WG_DEGREE)
    N: List[int] = Field(default_factory=lambda: list(config.WG_DEFAULT_N))
    eps2: List[float] = Field(default_factory=lambda: list(config.WG_DEFAULT_EPS2))
    lam: Optional[float] = Field(default=None, alias="lambda")
    solver: str = Field(default_factory=lambda: config.WG_SOLVER_METHOD)
    tol: float = Field(default_factory=lambda: config.WG_SOLVER_TOL)
    quad_tri_degree: Optional[int] = None
    quad_edge_points: Optional[int] = None
    out: str = Field(default_factory=lambda: config.WG_OUTPUT_DIR)
    formats: List[str] = Field(default_factory=lambda: ["table", "csv", "json"])
    dump_matrix: bool = False

    @field_validator("problem")
    @classmethod
    def _check_problem(cls, value: str) -> str:
        if value not in PROBLEMS:
            raise ValueError(f"unknown problem, expected one of {sorted(PROBLEMS)}")
        return value

    @field_validator("k")
    @classmethod
    def _check_degree(cls, value: int) -> int:
        if value not in config.SUPPORTED_DEGREES:
            raise ValueError(f"k must be one of {config.SUPPORTED_DEGREES}")
        return value

    @field_validator("N")
    @classmethod
    def _check_n(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("at least one N is required")
        if any(n < 4 or n % 4 for n in value):
            raise ValueError("every N must be a positive multiple of 4")
        if any(b != 2 * a for a, b in zip(value, value[1:])):
            raise ValueError("N must be a doubling sequence")
        return value

    @field_validator("eps2")
    @classmethod
    def _check_eps2(cls, value: List[float]) -> List[float]:
        if not value or any(not 0 < e <= 1 for e in value):
            raise ValueError("every eps^2 must lie in (0, 1]")
        return value

    @field_validator("lam", "tol")
    @classmethod
    def _check_positive(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not value > 0:
            raise ValueError("must be positive")
        return value

    @field_validator("solver")
    @classmethod
    def _check_solver(cls, value: str) -> str:
        if value not in config.SUPPORTED_SOLVERS:
            raise ValueError(f"solver must be one of {config.SUPPORTED_SOLVERS}")
        return value

    @field_validator("formats")
    @classmethod
    def _check_formats(cls, value: List[str]) -> List[str]:
        unknown = set(value) - set(config.SUPPORTED_FORMATS)
        if unknown:
            raise ValueError(f"unsupported formats {sorted(unknown)}")
        return value

    @model_validator(mode="after")
    def _check_quadrature(self) -> "RunConfig":
        if self.quad_tri_degree is not None and self.quad_tri_degree < 1:
            raise ValueError("quad_tri_degree must be at least 1")
        if self.quad_edge_points is not None and self.quad_edge_points < 1:
            raise ValueError("quad_edge_points must be at least 1")
        return self

    @property
    def grading(self) -> float:
        return self.lam if self.lam is not None else config.lambda_for(self.k)

    @property
    def stem(self) -> str:
        return f"{self.problem}_k{self.k}"


@dataclass
class SweepReport:
    config: RunConfig
    rows: List[Dict[str, Any]]
    paths: Dict[str, str] = field(default_factory=dict)

    @property
    def failures(self) -> List[Dict[str, Any]]:
        return [row for row in self.rows if row["status"] != "ok"]

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema": SCHEMA_VERSION,
            "config": self.config.model_dump(by_alias=True),
            "lambda_used": self.config.grading,
            "rows": self.rows,
            "failures": [
                {"eps2": row["eps2"], "N": row["N"], "k": row["k"], "error": row["error"]}
                for row in self.failures
            ],
        }


def _order_text(order) -> str:
    if order is None:
        return "-"
    return order if isinstance(order, str) else f"{order:.3f}"


def _cell_prefix(run: RunConfig, eps2: float, n: int) -> str:
    return os.path.join(run.out, "cells", f"{run.stem}_eps2-{eps2:.0e}_N{n}")


class SweepService:

    @staticmethod
    def solve_cell(run: RunConfig, eps2: float, n: int, correlation_id: Optional[str] = None) -> Dict[str, Any]:
        """
        One (eps^2, N) cell. Returns a row with both error modes and solver
        diagnostics; timing stays in the logs so rows are reproducible.
        """
        epsilon = math.sqrt(eps2)
        mesh = MeshService.build_mesh(MeshParams(N=n, epsilon=epsilon, lam=run.grading),
                                      correlation_id=correlation_id)
        problem = ProblemService.get(run.problem, epsilon)
        system = AssemblyService.assemble(
            mesh, run.k, problem,
            tri_degree=run.quad_tri_degree,
            edge_points_count=run.quad_edge_points,
            correlation_id=correlation_id,
        )
        if run.dump_matrix:
            ExportService.dump_matrix(system.A, _cell_prefix(run, eps2, n) + "_A.mtx",
                                      comment=f"{run.stem} eps2={eps2} N={n}", correlation_id=correlation_id)

        x, report = SolverService.solve(system.A, system.b, tol=run.tol, method=run.solver,
                                        correlation_id=correlation_id)
        solution = system.expand(x)
        interpolant = NormService.interpolate(problem, mesh, run.k, system.dofmap)
        discrete = NormService.triple_norm_M(system, interpolant - solution, problem, mode="discrete")
        exact = NormService.triple_norm_M(system, solution, problem, mode="exact")

        if "vtk" in run.formats:
            prefix = _cell_prefix(run, eps2, n)
            ExportService.export_solution(system, solution, prefix, problem, correlation_id=correlation_id)
            ExportService.export_mesh(mesh, prefix, correlation_id=correlation_id)

        solver = report.to_dict()
        solver.pop("wall_time")
        return {
            "status": "ok",
            "problem": run.problem,
            "k": run.k,
            "eps2": eps2,
            "epsilon": epsilon,
            "N": n,
            "tau": mesh.tau,
            "dofs": system.dofmap.size,
            "free_dofs": int(system.free.size),
            "error_discrete": discrete.total,
            "error_exact": exact.total,
            "energy": discrete.energy,
            "bound": NormService.uniform_bound(epsilon, n, run.k),
            "breakdown_discrete": discrete.to_dict(),
            "breakdown_exact": exact.to_dict(),
            "solver": solver,
            "error": None,
        }

    @staticmethod
    def _run_cell(run: RunConfig, eps2: float, n: int, correlation_id: str) -> Dict[str, Any]:
        cell = {"problem": run.problem, "k": run.k, "eps2": eps2, "N": n}
        try:
            row = SweepService.solve_cell(run, eps2, n, correlation_id)
        except WGError as e:
            e.diagnostics.update({"epsilon": math.sqrt(eps2), "N": n, "k": run.k})
            SolverLogger.log_cell_failure(cell, f"{type(e).__name__}: {e.message}", correlation_id=correlation_id)
            return dict(cell, status="failed", error=e.to_dict())

        SolverLogger.log_cell(
            {**cell, "error_discrete": row["error_discrete"], "error_exact": row["error_exact"]},
            correlation_id=correlation_id,
        )
        write_atomic(_cell_prefix(run, eps2, n) + ".json", json.dumps(row, indent=2, sort_keys=True) + "\n")
        return row

    @staticmethod
    def _finish(run: RunConfig, rows: List[Dict[str, Any]], correlation_id: str) -> SweepReport:
        SweepService.attach_orders(rows)
        report = SweepReport(config=run, rows=rows)
        report.paths = SweepService.write_reports(report)
        SolverLogger.log_sweep(run.problem, run.k, len(rows), len(report.failures), correlation_id=correlation_id)
        return report

    @staticmethod
    def run_sweep(run: RunConfig, correlation_id: Optional[str] = None) -> SweepReport:
        """Every (eps^2, N) cell in config order, sequentially."""
        correlation_id = correlation_id or SolverLogger.generate_correlation_id()
        rows = [
            SweepService._run_cell(run, eps2, n, correlation_id)
            for eps2 in run.eps2
            for n in run.N
        ]
        return SweepService._finish(run, rows, correlation_id)

    @staticmethod
    async def run_sweep_async(
        run: RunConfig,
        correlation_id: Optional[str] = None,
        max_concurrent: Optional[int] = None
    ) -> SweepReport:
        """Cells in worker threads, at most WG_MAX_CONCURRENT_CELLS at a time; rows kept in config order."""
        correlation_id = correlation_id or SolverLogger.generate_correlation_id()
        semaphore = asyncio.Semaphore(max_concurrent or config.WG_MAX_CONCURRENT_CELLS)

        async def cell(eps2: float, n: int) -> Dict[str, Any]:
            async with semaphore:
                return await asyncio.to_thread(SweepService._run_cell, run, eps2, n, correlation_id)

        rows = await asyncio.gather(*(cell(eps2, n) for eps2 in run.eps2 for n in run.N))
        return SweepService._finish(run, list(rows), correlation_id)

    @staticmethod
    def attach_orders(rows: List[Dict[str, Any]]) -> None:
        """Add order_discrete/order_exact/order_bound per eps^2 column; "exact" for errors at round-off level."""
        by_eps = {}
        for row in rows:
            by_eps.setdefault(row["eps2"], []).append(row)
        for mode, key in ORDER_KEYS.items():
            for column in by_eps.values():
                previous = None
                for row in column:
                    order = None
                    value = row.get(key)
                    if row["status"] == "ok" and value is not None:
                        if value <= EXACT_ERROR:
                            order = "exact"
                        elif previous is not None and previous[key] > EXACT_ERROR:
                            order = NormService.convergence_orders(
                                [(previous["N"], previous[key]), (row["N"], value)]
                            )[1]
                        previous = row
                    else:
                        previous = None
                    row[f"order_{mode}"] = order

    @staticmethod
    def format_table(report: SweepReport, mode: str = "discrete") -> str:
        """Rows N, columns (error, order) per eps^2."""
        run = report.config
        cells = {(row["eps2"], row["N"]): row for row in report.rows}
        out = io.StringIO()
        out.write(f"{run.problem}  k={run.k}  lambda={run.grading:g}  {NORM_COLUMNS[mode]}\n")
        header = f"{'N':>6}"
        for eps2 in run.eps2:
            header += f"  {'eps^2=' + format(eps2, 'g'):>14}  {'order':>7}"
        out.write(header + "\n")
        for n in run.N:
            line = f"{n:>6}"
            for eps2 in run.eps2:
                row = cells[(eps2, n)]
                if row["status"] != "ok":
                    line += f"  {'failed':>14}  {'-':>7}"
                    continue
                line += f"  {row[f'error_{mode}']:>14.5e}  {_order_text(row[f'order_{mode}']):>7}"
            out.write(line + "\n")
        for eps2 in run.eps2:
            text = ", ".join(_order_text(cells[(eps2, n)].get("order_bound")) for n in run.N)
            out.write(f"{'bound':>6}  eps^2={eps2:g} orders of eps^(1/2) N^-(k-1) ln^(k-1/2) N + N^-k: {text}\n")
        return out.getvalue()

    @staticmethod
    def format_csv(report: SweepReport) -> str:
        columns = ["problem", "k", "eps2", "N", "status", "error_discrete", "order_discrete",
                   "error_exact", "order_exact", "energy", "bound", "order_bound", "dofs", "free_dofs",
                   "solver_iterations", "refinement_steps", "relative_residual", "scaled_residual",
                   "converged"]
        out = io.StringIO()
        out.write(",".join(columns) + "\n")
        for row in report.rows:
            solver = row.get("solver") or {}
            values = {
                **row,
                "solver_iterations": solver.get("iterations"),
                "refinement_steps": solver.get("refinement_steps"),
                "scaled_residual": solver.get("scaled_residual"),
                "relative_residual": solver.get("relative_residual"),
                "converged": solver.get("converged"),
            }
            out.write(",".join("" if values.get(c) is None else str(values.get(c)) for c in columns) + "\n")
        return out.getvalue()

    @staticmethod
    def write_reports(report: SweepReport) -> Dict[str, str]:
        run = report.config
        base = os.path.join(run.out, run.stem)
        paths = {}
        if "table" in run.formats:
            text = "\n".join(SweepService.format_table(report, mode) for mode in NORM_COLUMNS)
            paths["table"] = write_atomic(base + "_table.txt", text)
        if "csv" in run.formats:
            paths["csv"] = write_atomic(base + "_errors.csv", SweepService.format_csv(report))
        if "json" in run.formats:
            paths["json"] = write_atomic(base + "_report.json",
                                         json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        return paths
