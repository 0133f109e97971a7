"""
Norm Service - interpolants, the discrete triple norm, energy norm and rates
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from services.assembly_service import DofMap, GlobalSystem
from services.basis_service import BasisService
from services.errors import NormError
from services.mesh_service import ShishkinMesh
from services.problem_service import ProblemSpec

logger = logging.getLogger(__name__)

NORM_MODES = ("discrete", "exact")


@dataclass
class ErrorBreakdown:
    """Squared contributions of |||e|||_M and the energy a(e, e) when it applies."""
    laplacian: float
    gradient: float
    reaction: float
    stabilizer: float
    total: float
    energy: Optional[float] = None
    mode: str = "discrete"

    def to_dict(self) -> dict:
        return asdict(self)


class NormService:

    @staticmethod
    def interpolate(problem: ProblemSpec, mesh: ShishkinMesh, k: int, dofmap=None) -> np.ndarray:
        """
        I_h u as a global weak DOF vector: Lagrange interpolation per triangle,
        L2 projections of u and grad u . n_e per edge.
        """
        if problem.exact is None:
            raise NormError(f"Problem '{problem.name}' has no exact solution to interpolate")
        dofmap = dofmap or DofMap(k=k, n_triangles=mesh.n_triangles, n_edges=mesh.n_edges,
                                  boundary_edges=mesh.boundary_edges)
        exact = problem.exact
        v = np.zeros(dofmap.size)
        for t in range(mesh.n_triangles):
            v[dofmap.interior(t)] = BasisService.lagrange_interpolate_on_tri(exact.u, mesh.element_vertices(t), k)
        for e in range(mesh.n_edges):
            ev = mesh.edge_vertices(e)
            normal = mesh.edge_normals[e]

            def flux(px, py):
                gx, gy = exact.grad(px, py)
                return gx * normal[0] + gy * normal[1]

            v[dofmap.trace(e)] = BasisService.l2_project_on_edge(exact.u, ev, k)
            v[dofmap.flux(e)] = BasisService.l2_project_on_edge(flux, ev, k - 1)
        return v

    @staticmethod
    def triple_norm_M(
        system: GlobalSystem,
        v: np.ndarray,
        problem: Optional[ProblemSpec] = None,
        mode: str = "discrete"
    ) -> ErrorBreakdown:
        """
        |||e|||_M^2 = sum_T (eps^2 |Delta e0|^2 + |grad e0|^2 + |a e0|^2) + s(e, e).

        mode "discrete": e = v, a full weak DOF vector (for instance I_h u - u_N).
        mode "exact": e = u - v with the exact u evaluated at quadrature points;
        the jumps of u vanish, so the stabilizer part is s(v, v).
        """
        if mode not in NORM_MODES:
            raise NormError(f"Unknown norm mode '{mode}'", {"modes": list(NORM_MODES)})
        if problem is None:
            raise NormError("The reaction coefficient comes from the problem; none given")
        if mode == "exact" and problem.exact is None:
            raise NormError(f"Problem '{problem.name}' has no exact solution")

        mesh = system.mesh
        eps2 = system.epsilon ** 2
        lap_sum = grad_sum = reaction_sum = stab_sum = 0.0
        for t in range(mesh.n_triangles):
            ops = system.element_ops[t]
            local = v[system.local_dofs(t)]
            c0 = local[ops.layout.interior]
            origin = mesh.nodes[mesh.triangles[t, 0]]
            absolute = ops.points + origin
            px, py = absolute[:, 0], absolute[:, 1]

            e0 = ops.phi @ c0
            de0 = np.einsum("qid,i->qd", ops.dphi, c0)
            lap_e0 = ops.lap_phi @ c0
            if mode == "exact":
                gx, gy = problem.exact.grad(px, py)
                e0 = problem.exact.u(px, py) - e0
                de0 = np.column_stack([gx, gy]) - de0
                lap_e0 = problem.exact.laplacian(px, py) - lap_e0

            a_values = problem.a(px, py)
            w = ops.weights
            lap_sum += eps2 * float(w @ lap_e0 ** 2)
            grad_sum += float(w @ np.sum(de0 ** 2, axis=1))
            reaction_sum += float(w @ (a_values * e0) ** 2)
            stab = system.rho[t] * ops.flux_jump + system.sigma[t] * ops.trace_jump
            stab_sum += float(local @ stab @ local)

        stab_sum = max(stab_sum, 0.0)
        total = math.sqrt(lap_sum + grad_sum + reaction_sum + stab_sum)
        energy = NormService.energy_norm(system, v) if mode == "discrete" else None
        return ErrorBreakdown(
            laplacian=lap_sum,
            gradient=grad_sum,
            reaction=reaction_sum,
            stabilizer=stab_sum,
            total=total,
            energy=energy,
            mode=mode,
        )

    @staticmethod
    def energy_norm(system: GlobalSystem, v: np.ndarray) -> float:
        """sqrt(v^t A_full v) with the unreduced operator."""
        value = float(v @ (system.A_full @ v))
        scale = float(np.abs(v) @ (abs(system.A_full) @ np.abs(v)))
        if value < -1e-12 * max(scale, 1e-300):
            raise NormError("Negative energy: the assembled operator is not positive semidefinite",
                            {"quadratic_form": value, "scale": scale})
        return math.sqrt(max(value, 0.0))

    @staticmethod
    def convergence_orders(errors: Sequence[Tuple[int, float]]) -> List[Optional[float]]:
        """log2(e_N / e_2N), aligned with the finer N; the first entry has no order."""
        errors = list(errors)
        bad = [n for n, e in errors if not e > 0]
        if bad:
            raise NormError("Convergence orders need positive errors", {"N": bad})

        orders: List[Optional[float]] = [None] if errors else []
        for (n_coarse, e_coarse), (n_fine, e_fine) in zip(errors, errors[1:]):
            if n_fine != 2 * n_coarse:
                raise NormError("Convergence orders need a doubling N sequence", {"N": [n_coarse, n_fine]})
            orders.append(math.log2(e_coarse / e_fine))
        return orders

    @staticmethod
    def fit_rate(errors: Sequence[Tuple[int, float]]) -> float:
        """Least-squares slope of -log e against log N."""
        if len(errors) < 2:
            raise NormError("Fitting a rate needs at least two points")
        n = np.array([item[0] for item in errors], dtype=float)
        e = np.array([item[1] for item in errors], dtype=float)
        if np.any(e <= 0):
            raise NormError("Fitting a rate needs positive errors")
        slope, _ = np.polyfit(np.log(n), np.log(e), 1)
        return float(-slope)

    @staticmethod
    def uniform_bound(epsilon: float, N: int, k: int) -> float:
        """
        eps^(1/2) N^-(k-1) ln^(k-1/2) N + N^-k, the uniform error bound for
        lambda >= k + 1 with its constant dropped.

        The first term carries the layers and decays only like N^-(k-1) up to
        logs; it dominates the second whenever the solution has layers of size
        eps and N is moderate, so observed orders follow it rather than k.
        """
        if not epsilon > 0 or N < 2:
            raise NormError("The uniform bound needs eps > 0 and N >= 2", {"epsilon": epsilon, "N": N})
        log_n = math.log(N)
        return math.sqrt(epsilon) * N ** -(k - 1) * log_n ** (k - 0.5) + float(N) ** -k

    @staticmethod
    def norm_equivalence_ratios(
        system: GlobalSystem,
        problem: ProblemSpec,
        samples: int = 100,
        seed: int = 0
    ) -> Dict[str, float]:
        """
        |||v||| / |||v|||_M for random v vanishing on the boundary traces and
        fluxes. Returns the sampled min and max with the ratios themselves.
        """
        rng = np.random.default_rng(seed)
        ratios = []
        for _ in range(samples):
            v = system.expand(rng.standard_normal(system.free.size)) - system.boundary_values
            energy = NormService.energy_norm(system, v)
            triple = NormService.triple_norm_M(system, v, problem).total
            if triple <= 0:
                raise NormError("Triple norm vanished on a nonzero sample")
            ratios.append(energy / triple)
        ratios = np.array(ratios)
        return {
            "min": float(ratios.min()),
            "max": float(ratios.max()),
            "ratios": ratios.tolist(),
        }
