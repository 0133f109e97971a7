"""
Integration tests: polynomial solutions are reproduced exactly
"""
import math
import pytest
import numpy as np
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '../..'))

from services.assembly_service import AssemblyService
from services.mesh_service import MeshParams, MeshService
from services.norm_service import NormService
from services.problem_service import ProblemService
from services.solver_service import SolverService


def _solve_patch(k, eps2, n, method="direct"):
    epsilon = math.sqrt(eps2)
    mesh = MeshService.build_mesh(MeshParams(N=n, epsilon=epsilon, lam=float(k + 1)))
    problem = ProblemService.patch_problem(k, epsilon)
    system = AssemblyService.assemble(mesh, k, problem)
    x, report = SolverService.solve(system.A, system.b, tol=1e-12, method=method)
    solution = system.expand(x)
    interpolant = NormService.interpolate(problem, mesh, k, system.dofmap)
    return system, problem, solution, interpolant, report


class TestPatchTest:
    """u in P_k with boundary data from u: the discrete solution is I_h u."""

    @pytest.mark.parametrize("k", [2, 3])
    @pytest.mark.parametrize("eps2", [1.0, 1e-6])
    @pytest.mark.parametrize("n", [4, 8])
    def test_reproduces_interpolant(self, k, eps2, n):
        system, problem, solution, interpolant, report = _solve_patch(k, eps2, n)
        discrete = NormService.triple_norm_M(system, interpolant - solution, problem, mode="discrete")
        exact = NormService.triple_norm_M(system, solution, problem, mode="exact")
        assert report.converged
        assert discrete.total <= 1e-7
        assert exact.total <= 1e-7
        assert np.max(np.abs(solution - interpolant)) <= 1e-6

    def test_cg_reproduces_interpolant(self):
        system, problem, solution, interpolant, report = _solve_patch(2, 1e-2, 4, method="cg")
        discrete = NormService.triple_norm_M(system, interpolant - solution, problem)
        assert report.method == "cg"
        assert discrete.total <= 1e-7

    def test_solution_samples_match_polynomial(self):
        """u0 evaluated anywhere in the square equals x^3."""
        from services.export_service import ExportService
        system, problem, solution, _, _ = _solve_patch(3, 1e-6, 4)
        points, values = ExportService.sample_solution(system, solution, grid_points=11)
        assert np.allclose(values, points[:, 0] ** 3, atol=1e-8)
