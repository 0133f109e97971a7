"""
Assembly Service - local stiffness blocks, stabilizer and the global system

The bilinear form a(u, v) = eps^2 (Delta_w u, Delta_w v) + (grad_w u, grad_w v)
+ (a u0, v0) + s(u, v) is evaluated element by element from the weak operator
matrices and scattered into one sparse matrix over all weak DOFs. Clamped
boundary conditions are imposed by eliminating trace and flux DOFs on the
boundary.
"""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from config import config
from services.basis_service import BasisService, EdgeBasis, QuadRule, TriBasis, edge_points
from services.errors import AssemblyError
from services.mesh_service import REGION_CODES, Region, ShishkinMesh
from services.solver_logger import SolverLogger
from services.weak_operator_service import (
    ElementGeometry,
    LocalLayout,
    WeakGradientOp,
    WeakLaplacianOp,
    WeakOperatorService,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ElementMatrices:
    A: np.ndarray   # eps^2 * mass of P_{k-2}(T)
    B: np.ndarray   # vector mass of [P_l(T)]^2
    C: np.ndarray   # (a phi_i, phi_j)_T


@dataclass(frozen=True, eq=False)
class LocalStiffness:
    """S_T from the block formulas plus the stabilizer matrix of the same element."""
    layout: LocalLayout
    bilinear: np.ndarray
    stabilizer: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return self.bilinear + self.stabilizer

    def block(self, row: str, col: str) -> np.ndarray:
        """Block of the bilinear part, row/col in {"0", "b", "g"}."""
        parts = {"0": self.layout.interior, "b": self.layout.trace, "g": self.layout.flux}
        return self.bilinear[parts[row], parts[col]]


@dataclass(frozen=True, eq=False)
class LocalOperatorSet:
    """
    Geometry-only data of one element shape, expressed relative to its first
    vertex: weak operators, unscaled stiffness parts, stabilizer parts and
    basis evaluations at the triangle quadrature points.
    """
    k: int
    geometry: ElementGeometry
    basis: TriBasis
    laplacian: WeakLaplacianOp
    gradient: WeakGradientOp
    laplacian_part: np.ndarray    # W^T M_w W
    gradient_part: np.ndarray     # G^T B G
    flux_jump: np.ndarray         # <grad u0 . n_e - ug, grad v0 . n_e - vg>
    trace_jump: np.ndarray        # <u0 - ub, v0 - vb>
    points: np.ndarray            # triangle quadrature points (relative)
    weights: np.ndarray
    phi: np.ndarray               # (q, N0)
    dphi: np.ndarray              # (q, N0, 2)
    lap_phi: np.ndarray           # (q, N0)

    @property
    def layout(self) -> LocalLayout:
        return LocalLayout(self.k)


@dataclass(frozen=True)
class DofMap:
    """
    Global numbering: interior blocks per triangle, then trace blocks per
    edge, then flux blocks per edge.
    """
    k: int
    n_triangles: int
    n_edges: int
    boundary_edges: np.ndarray

    @property
    def layout(self) -> LocalLayout:
        return LocalLayout(self.k)

    @property
    def n_interior(self) -> int:
        return self.n_triangles * self.layout.n0

    @property
    def n_trace(self) -> int:
        return self.n_edges * self.layout.nb_edge

    @property
    def n_flux(self) -> int:
        return self.n_edges * self.layout.ng_edge

    @property
    def size(self) -> int:
        return self.n_interior + self.n_trace + self.n_flux

    def interior(self, t: int) -> np.ndarray:
        n0 = self.layout.n0
        return np.arange(t * n0, (t + 1) * n0)

    def trace(self, e: int) -> np.ndarray:
        nb = self.layout.nb_edge
        return self.n_interior + np.arange(e * nb, (e + 1) * nb)

    def flux(self, e: int) -> np.ndarray:
        ng = self.layout.ng_edge
        return self.n_interior + self.n_trace + np.arange(e * ng, (e + 1) * ng)

    def local_to_global(self, tri_edges: np.ndarray, t: int) -> np.ndarray:
        edges = tri_edges[t]
        return np.concatenate(
            [self.interior(t)]
            + [self.trace(int(e)) for e in edges]
            + [self.flux(int(e)) for e in edges]
        )

    @property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        for e in np.flatnonzero(self.boundary_edges):
            mask[self.trace(int(e))] = True
            mask[self.flux(int(e))] = True
        return mask

    def counts(self) -> Dict[str, int]:
        return {
            "interior": self.n_interior,
            "trace": self.n_trace,
            "flux": self.n_flux,
            "total": self.size,
            "boundary": int(self.boundary_mask.sum()),
        }


@dataclass(frozen=True, eq=False)
class GlobalSystem:
    """Reduced SPD system on the free DOFs plus the full operator it came from."""
    mesh: ShishkinMesh
    dofmap: DofMap
    A: sp.csr_matrix
    b: np.ndarray
    A_full: sp.csr_matrix
    b_full: np.ndarray
    free: np.ndarray
    boundary_values: np.ndarray
    element_ops: List[LocalOperatorSet]
    rho: np.ndarray
    sigma: np.ndarray
    epsilon: float

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        """Full weak DOF vector from a solution on the free DOFs."""
        full = self.boundary_values.copy()
        full[self.free] = x_free
        return full

    def local_dofs(self, t: int) -> np.ndarray:
        return self.dofmap.local_to_global(self.mesh.tri_edges, t)


def _edge_geometry_key(mesh: ShishkinMesh, t: int) -> Tuple:
    """Element shape class: orientation, nominal legs and which end each edge starts from."""
    nodes = mesh.triangles[t]
    starts = tuple(
        bool(mesh.edges[e, 0] == nodes[l]) for l, e in enumerate(mesh.tri_edges[t])
    )
    return (bool(mesh.upper[t]), float(mesh.hx[t]), float(mesh.hy[t]), starts)


class AssemblyService:

    @staticmethod
    def element_matrices(
        ops: LocalOperatorSet,
        epsilon: float,
        a: Callable,
        origin: Optional[np.ndarray] = None
    ) -> ElementMatrices:
        """A_T, B_T and C_T of one element; `origin` places the relative geometry."""
        origin = np.zeros(2) if origin is None else origin
        absolute = ops.points + origin
        a_values = np.asarray(a(absolute[:, 0], absolute[:, 1]), dtype=float) * np.ones(ops.weights.size)
        C = ops.phi.T @ ((ops.weights * a_values)[:, None] * ops.phi)

        psi = ops.gradient.space.values(ops.points)
        mass = psi.T @ (ops.weights[:, None] * psi)
        n = mass.shape[0]
        B = np.zeros((2 * n, 2 * n))
        B[:n, :n] = mass
        B[n:, n:] = mass
        return ElementMatrices(A=epsilon ** 2 * ops.laplacian.mass, B=B, C=C)

    @staticmethod
    def local_stiffness(
        ops: LocalOperatorSet,
        epsilon: float,
        a: Callable,
        rho: float = 0.0,
        sigma: float = 0.0,
        origin: Optional[np.ndarray] = None
    ) -> LocalStiffness:
        """
        Nine blocks of S_T:
            S00 = C0 A C0^t + E^t D^-t B D^-1 E + C
            S0b = C0 A Cb^t - E^t D^-t B D^-1 F
            S0g = C0 A Cg^t
            Sbb = Cb A Cb^t + F^t D^-t B D^-1 F
            Sbg = Cb A Cg^t
            Sgg = Cg A Cg^t
        """
        mats = AssemblyService.element_matrices(ops, epsilon, a, origin)
        lap, grad = ops.laplacian, ops.gradient
        C0, Cb, Cg = lap.C0, lap.Cb, lap.Cg
        A, B = mats.A, mats.B
        DinvE = np.linalg.solve(grad.D, grad.E)
        DinvF = np.linalg.solve(grad.D, grad.F)

        S00 = C0 @ A @ C0.T + DinvE.T @ B @ DinvE + mats.C
        S0b = C0 @ A @ Cb.T - DinvE.T @ B @ DinvF
        S0g = C0 @ A @ Cg.T
        Sbb = Cb @ A @ Cb.T + DinvF.T @ B @ DinvF
        Sbg = Cb @ A @ Cg.T
        Sgg = Cg @ A @ Cg.T
        S = np.block([
            [S00, S0b, S0g],
            [S0b.T, Sbb, Sbg],
            [S0g.T, Sbg.T, Sgg],
        ])
        S = 0.5 * (S + S.T)
        return LocalStiffness(
            layout=ops.layout,
            bilinear=S,
            stabilizer=rho * ops.flux_jump + sigma * ops.trace_jump,
        )

    @staticmethod
    def stabilizer_parameters(region: Region, epsilon: float, N: int) -> Tuple[float, float]:
        """(rho_T, sigma_T): eps*N and N on Omega0, eps*N/ln N and eps^-1 (N/ln N)^3 in the layers."""
        if region == Region.OMEGA0:
            return epsilon * N, float(N)
        log_n = math.log(N)
        return epsilon * N / log_n, (N / log_n) ** 3 / epsilon

    @staticmethod
    def stabilizer_parts(
        geometry: ElementGeometry,
        k: int,
        basis: TriBasis,
        edge_rule: QuadRule
    ) -> Tuple[np.ndarray, np.ndarray]:
        """
        Unscaled stabilizer matrices on the local DOFs:
        sum over edges of <grad u0 . n_e - ug, grad v0 . n_e - vg>_e and <u0 - ub, v0 - vb>_e.
        """
        layout = LocalLayout(k)
        flux_jump = np.zeros((layout.size, layout.size))
        trace_jump = np.zeros((layout.size, layout.size))
        lb = EdgeBasis(k).values(edge_rule.points)
        lg = EdgeBasis(k - 1).values(edge_rule.points)
        for l in range(3):
            x = edge_points(geometry.edge_vertices[l], edge_rule.points)
            we = edge_rule.weights * geometry.edge_length(l)

            j1 = np.zeros((edge_rule.size, layout.size))
            j1[:, layout.interior] = basis.gradients(x) @ geometry.edge_normals[l]
            j1[:, layout.flux_edge(l)] = -lg
            flux_jump += j1.T @ (we[:, None] * j1)

            j2 = np.zeros((edge_rule.size, layout.size))
            j2[:, layout.interior] = basis.values(x)
            j2[:, layout.trace_edge(l)] = -lb
            trace_jump += j2.T @ (we[:, None] * j2)
        return 0.5 * (flux_jump + flux_jump.T), 0.5 * (trace_jump + trace_jump.T)

    @staticmethod
    def stabilizer_local(
        geometry: ElementGeometry,
        k: int,
        rho: float,
        sigma: float,
        edge_rule: Optional[QuadRule] = None
    ) -> np.ndarray:
        basis = TriBasis(geometry.vertices, k)
        edge_rule = edge_rule or BasisService.edge_quadrature(config.edge_quad_points_for(k))
        flux_jump, trace_jump = AssemblyService.stabilizer_parts(geometry, k, basis, edge_rule)
        return rho * flux_jump + sigma * trace_jump

    @staticmethod
    def build_operator_set(
        geometry: ElementGeometry,
        k: int,
        tri_degree: Optional[int] = None,
        edge_points_count: Optional[int] = None,
        gradient_degree: Optional[int] = None
    ) -> LocalOperatorSet:
        """All geometry-only element data, computed relative to the first vertex."""
        relative = geometry.translated(geometry.vertices[0])
        tri_rule = BasisService.tri_quadrature(tri_degree or config.tri_quad_degree_for(k))
        edge_rule = BasisService.edge_quadrature(edge_points_count or config.edge_quad_points_for(k))
        if gradient_degree is None:
            gradient_degree = k + config.WG_GRADIENT_DEGREE_OFFSET

        basis = TriBasis(relative.vertices, k)
        lap = WeakOperatorService.weak_laplacian_op(relative, k, basis, tri_rule, edge_rule)
        grad = WeakOperatorService.weak_gradient_op(relative, k, basis, tri_rule, edge_rule, gradient_degree)
        layout = LocalLayout(k)

        W = lap.matrix()
        G = grad.matrix(layout)
        flux_jump, trace_jump = AssemblyService.stabilizer_parts(relative, k, basis, edge_rule)
        points, weights = BasisService.map_tri_rule(tri_rule, relative.vertices)

        return LocalOperatorSet(
            k=k,
            geometry=relative,
            basis=basis,
            laplacian=lap,
            gradient=grad,
            laplacian_part=W.T @ lap.mass @ W,
            gradient_part=G.T @ grad.D @ G,
            flux_jump=flux_jump,
            trace_jump=trace_jump,
            points=points,
            weights=weights,
            phi=basis.values(points),
            dphi=basis.gradients(points),
            lap_phi=basis.laplacians(points),
        )

    @staticmethod
    def operator_sets(
        mesh: ShishkinMesh,
        k: int,
        tri_degree: Optional[int] = None,
        edge_points_count: Optional[int] = None,
        gradient_degree: Optional[int] = None
    ) -> List[LocalOperatorSet]:
        """
        One operator set per triangle. Triangles of the same shape class share
        the set built from the first of them in assembly order.
        """
        cache: Dict[Tuple, LocalOperatorSet] = {}
        sets = []
        for t in range(mesh.n_triangles):
            key = _edge_geometry_key(mesh, t)
            ops = cache.get(key)
            if ops is None:
                geometry = ElementGeometry.from_mesh(mesh, t)
                if geometry.area <= 0:
                    raise AssemblyError(f"Triangle {t} has zero measure", {"triangle": t})
                ops = AssemblyService.build_operator_set(
                    geometry, k, tri_degree, edge_points_count, gradient_degree
                )
                cache[key] = ops
            sets.append(ops)
        logger.debug(f"{len(cache)} distinct element shapes for N={mesh.params.N}")
        return sets

    @staticmethod
    def boundary_values(mesh: ShishkinMesh, dofmap: DofMap, problem) -> np.ndarray:
        """Full vector that is zero except on boundary traces and fluxes (from-exact mode)."""
        values = np.zeros(dofmap.size)
        if problem.boundary_mode != "from_exact":
            return values
        k = dofmap.k
        exact = problem.exact
        for e in np.flatnonzero(mesh.boundary_edges):
            ev = mesh.edge_vertices(int(e))
            normal = mesh.edge_normals[e]

            def flux(x, y):
                gx, gy = exact.grad(x, y)
                return gx * normal[0] + gy * normal[1]

            values[dofmap.trace(int(e))] = BasisService.l2_project_on_edge(exact.u, ev, k)
            values[dofmap.flux(int(e))] = BasisService.l2_project_on_edge(flux, ev, k - 1)
        return values

    @staticmethod
    def assemble(
        mesh: ShishkinMesh,
        k: int,
        problem,
        tri_degree: Optional[int] = None,
        edge_points_count: Optional[int] = None,
        gradient_degree: Optional[int] = None,
        workers: Optional[int] = None,
        correlation_id: Optional[str] = None
    ) -> GlobalSystem:
        """
        Scatter local S_T + stabilizer into the global matrix, load (g, v0)
        into interior rows, then eliminate the boundary trace/flux DOFs.
        """
        started = time.perf_counter()
        if k not in config.SUPPORTED_DEGREES:
            raise AssemblyError(f"Unsupported degree k={k}", {"supported": list(config.SUPPORTED_DEGREES)})

        dofmap = DofMap(k=k, n_triangles=mesh.n_triangles, n_edges=mesh.n_edges,
                        boundary_edges=mesh.boundary_edges)
        layout = dofmap.layout
        epsilon = problem.epsilon
        N = mesh.params.N
        element_ops = AssemblyService.operator_sets(mesh, k, tri_degree, edge_points_count, gradient_degree)

        params = {
            code: AssemblyService.stabilizer_parameters(region, epsilon, N)
            for region, code in REGION_CODES.items()
        }
        rho = np.array([params[int(r)][0] for r in mesh.region])
        sigma = np.array([params[int(r)][1] for r in mesh.region])

        sigma_h = float(np.max(sigma * np.maximum(mesh.hx, mesh.hy)))
        if sigma_h > config.WG_CONDITIONING_WARN:
            SolverLogger.log_conditioning(sigma_h, config.WG_CONDITIONING_WARN, epsilon, N,
                                          correlation_id=correlation_id)

        def element(t: int):
            ops = element_ops[t]
            origin = mesh.nodes[mesh.triangles[t, 0]]
            dofs = dofmap.local_to_global(mesh.tri_edges, t)
            if dofs.size != layout.size:
                raise AssemblyError("Local DOF map does not match the layout", {"triangle": t})

            absolute = ops.points + origin
            a_values = np.asarray(problem.a(absolute[:, 0], absolute[:, 1]), dtype=float) * np.ones(ops.weights.size)
            g_values = np.asarray(problem.g(absolute[:, 0], absolute[:, 1]), dtype=float) * np.ones(ops.weights.size)

            S = epsilon ** 2 * ops.laplacian_part + ops.gradient_part
            S[layout.interior, layout.interior] += ops.phi.T @ ((ops.weights * a_values)[:, None] * ops.phi)
            S += rho[t] * ops.flux_jump + sigma[t] * ops.trace_jump
            S = 0.5 * (S + S.T)
            load = ops.phi.T @ (ops.weights * g_values)
            return dofs, S, load

        workers = workers or config.WG_ASSEMBLY_WORKERS
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                contributions = list(pool.map(element, range(mesh.n_triangles)))
        else:
            contributions = [element(t) for t in range(mesh.n_triangles)]

        rows, cols, vals = [], [], []
        b_full = np.zeros(dofmap.size)
        for dofs, S, load in contributions:
            rows.append(np.repeat(dofs, dofs.size))
            cols.append(np.tile(dofs, dofs.size))
            vals.append(S.ravel())
            b_full[dofs[layout.interior]] += load

        A_full = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(dofmap.size, dofmap.size),
        ).tocsr()
        A_full.sum_duplicates()

        boundary = dofmap.boundary_mask
        free = np.flatnonzero(~boundary)
        fixed = np.flatnonzero(boundary)
        u_bd = AssemblyService.boundary_values(mesh, dofmap, problem)

        A = A_full[free][:, free].tocsr()
        b = b_full[free] - A_full[free][:, fixed] @ u_bd[fixed]

        SolverLogger.log_assembly(dofmap.size, free.size, A.nnz, time.perf_counter() - started,
                                  correlation_id=correlation_id)
        return GlobalSystem(
            mesh=mesh,
            dofmap=dofmap,
            A=A,
            b=b,
            A_full=A_full,
            b_full=b_full,
            free=free,
            boundary_values=u_bd,
            element_ops=element_ops,
            rho=rho,
            sigma=sigma,
            epsilon=epsilon,
        )
