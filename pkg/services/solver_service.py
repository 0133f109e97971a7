"""
Solver Service - sparse SPD solves for the reduced weak Galerkin system

Both methods work on the Jacobi-equilibrated system D A D y = D b with
D = diag(A)^{-1/2}; the tolerance is checked on its relative residual.
"""
import logging
import math
import time
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg, splu

from config import config
from services.errors import SolverError
from services.solver_logger import SolverLogger

logger = logging.getLogger(__name__)


@dataclass
class SolveReport:
    method: str
    iterations: int
    relative_residual: float
    wall_time: float
    converged: bool = True
    min_pivot: Optional[float] = None
    size: int = 0
    refinement_steps: int = 0
    scaled_residual: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _relative(r: np.ndarray, rhs_norm: float) -> float:
    return float(np.linalg.norm(r)) / rhs_norm


class SolverService:

    @staticmethod
    def _fail(message: str, diagnostics: dict, correlation_id: Optional[str]) -> SolverError:
        SolverLogger.log_solver_failure(message, diagnostics, correlation_id=correlation_id)
        return SolverError(message, diagnostics)

    @staticmethod
    def solve(
        A: sp.spmatrix,
        b: np.ndarray,
        tol: Optional[float] = None,
        method: Optional[str] = None,
        correlation_id: Optional[str] = None
    ) -> Tuple[np.ndarray, SolveReport]:
        """
        Solve A x = b for sparse SPD A.

        "direct": symmetric-mode sparse LU of the equilibrated matrix with
        diagonal pivots (an LDL^T in disguise), pivots checked for positivity,
        then iterative refinement. "cg": conjugate gradients on the
        equilibrated matrix (Jacobi preconditioning) capped at 50 sqrt(n)
        iterations. Raises SolverError when the equilibrated relative residual
        stays above tol; the unscaled one is reported as relative_residual.
        """
        tol = config.WG_SOLVER_TOL if tol is None else tol
        method = method or config.WG_SOLVER_METHOD
        started = time.perf_counter()

        A = sp.csr_matrix(A)
        b = np.asarray(b, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n) or b.shape != (n,):
            raise SolverError("Matrix and right-hand side dimensions do not match",
                              {"matrix": list(A.shape), "rhs": list(b.shape)})
        if method not in config.SUPPORTED_SOLVERS:
            raise SolverError(f"Unknown solver method '{method}'", {"supported": list(config.SUPPORTED_SOLVERS)})

        b_norm = float(np.linalg.norm(b))
        if b_norm == 0.0:
            report = SolveReport(method=method, iterations=0, relative_residual=0.0,
                                 wall_time=time.perf_counter() - started, size=n)
            SolverLogger.log_solve(report.to_dict(), correlation_id=correlation_id)
            return np.zeros(n), report

        diag = A.diagonal()
        if np.any(diag <= 0):
            raise SolverService._fail(
                "Matrix has a nonpositive diagonal entry; not positive definite",
                {"min_diagonal": float(diag.min()), "index": int(np.argmin(diag))},
                correlation_id,
            )

        scale = 1.0 / np.sqrt(diag)
        scaled = (sp.diags(scale) @ A @ sp.diags(scale)).tocsr()
        rhs = scale * b

        iterations = steps = 0
        min_pivot = None
        if method == "direct":
            x, steps, min_pivot = SolverService._direct(A, b, scaled, scale, tol, correlation_id)
        else:
            x, iterations = SolverService._cg(scaled, rhs, scale, tol, correlation_id)

        r = b - A @ x
        residual = _relative(r, b_norm)
        scaled_residual = _relative(scale * r, float(np.linalg.norm(rhs)))
        report = SolveReport(
            method=method,
            iterations=iterations,
            relative_residual=residual,
            wall_time=time.perf_counter() - started,
            converged=scaled_residual <= tol,
            min_pivot=min_pivot,
            size=n,
            refinement_steps=steps,
            scaled_residual=scaled_residual,
        )
        SolverLogger.log_solve(report.to_dict(), correlation_id=correlation_id)
        if not report.converged:
            raise SolverService._fail(
                "Residual above tolerance after iterative refinement",
                {"relative_residual": residual, "scaled_residual": scaled_residual,
                 "refinement_steps": steps, "tol": tol, "size": n},
                correlation_id,
            )
        return x, report

    @staticmethod
    def _direct(A, b, scaled, scale, tol, correlation_id):
        try:
            lu = splu(
                scaled.tocsc(),
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as e:
            raise SolverService._fail(f"Sparse factorization failed: {e}", {"size": A.shape[0]}, correlation_id)

        pivots = lu.U.diagonal()
        min_pivot = float(pivots.min())
        if not min_pivot > 0:
            raise SolverService._fail(
                "Nonpositive pivot in symmetric factorization; matrix is not positive definite",
                {"min_pivot": min_pivot, "index": int(np.argmin(pivots))},
                correlation_id,
            )

        b_norm = float(np.linalg.norm(b))
        rhs_norm = float(np.linalg.norm(scale * b))
        x = scale * lu.solve(scale * b)
        steps = 0
        for _ in range(config.WG_REFINEMENT_STEPS):
            r = b - A @ x
            # Refine until both residuals meet tol; only the equilibrated one is binding
            if _relative(scale * r, rhs_norm) <= tol and _relative(r, b_norm) <= tol:
                break
            x = x + scale * lu.solve(scale * r)
            steps += 1
        return x, steps, min_pivot

    @staticmethod
    def _cg(scaled, rhs, scale, tol, correlation_id):
        n = scaled.shape[0]
        maxiter = max(1, int(50 * math.sqrt(n)))
        rhs_norm = float(np.linalg.norm(rhs))
        counter = {"iterations": 0}

        def count(_):
            counter["iterations"] += 1

        y, info = cg(scaled, rhs, rtol=tol, atol=0.0, maxiter=maxiter, callback=count)
        # The recurrence residual can drift below the true one; restart from the iterate
        for _ in range(config.WG_REFINEMENT_STEPS):
            if info != 0 or _relative(rhs - scaled @ y, rhs_norm) <= tol:
                break
            y, info = cg(scaled, rhs, x0=y, rtol=tol, atol=0.0, maxiter=maxiter, callback=count)
        if info > 0:
            raise SolverService._fail(
                "Conjugate gradients did not converge",
                {
                    "iterations": counter["iterations"],
                    "maxiter": maxiter,
                    "scaled_residual": _relative(rhs - scaled @ y, rhs_norm),
                },
                correlation_id,
            )
        if info < 0:
            raise SolverService._fail("Conjugate gradients broke down", {"info": int(info)}, correlation_id)
        return scale * y, counter["iterations"]
