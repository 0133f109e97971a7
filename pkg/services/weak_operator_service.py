"""
Weak Operator Service - discrete weak Laplacian and weak gradient per element

For a local weak function v = {v0, vb, vg} the weak Laplacian lives in
P_{k-2}(T) and the weak gradient in [P_l(T)]^2. Both are represented by
coefficient matrices acting on the local DOF vector, computed from the
defining identities with one SPD mass solve per element.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from services.basis_service import (
    BasisService,
    EdgeBasis,
    QuadRule,
    ScaledMonomials,
    TriBasis,
    edge_points,
)
from services.mesh_service import LOCAL_EDGES, ShishkinMesh


@dataclass(frozen=True)
class LocalLayout:
    """
    Local DOF ordering: [v0 (dim P_k) | vb edge 0, 1, 2 (k+1 each) | vg edge 0, 1, 2 (k each)].
    """
    k: int

    @property
    def n0(self) -> int:
        return (self.k + 1) * (self.k + 2) // 2

    @property
    def nb_edge(self) -> int:
        return self.k + 1

    @property
    def ng_edge(self) -> int:
        return self.k

    @property
    def nb(self) -> int:
        return 3 * self.nb_edge

    @property
    def ng(self) -> int:
        return 3 * self.ng_edge

    @property
    def size(self) -> int:
        return self.n0 + self.nb + self.ng

    @property
    def interior(self) -> slice:
        return slice(0, self.n0)

    @property
    def trace(self) -> slice:
        return slice(self.n0, self.n0 + self.nb)

    @property
    def flux(self) -> slice:
        return slice(self.n0 + self.nb, self.size)

    def trace_edge(self, l: int) -> slice:
        start = self.n0 + l * self.nb_edge
        return slice(start, start + self.nb_edge)

    def flux_edge(self, l: int) -> slice:
        start = self.n0 + self.nb + l * self.ng_edge
        return slice(start, start + self.ng_edge)


@dataclass(frozen=True, eq=False)
class ElementGeometry:
    """
    Triangle vertices plus, per local edge, the globally oriented edge
    endpoints, the fixed edge normal n_e and the sign n_e . n_outward.
    """
    vertices: np.ndarray        # (3, 2)
    edge_vertices: np.ndarray   # (3, 2, 2)
    edge_normals: np.ndarray    # (3, 2)
    edge_signs: np.ndarray      # (3,)

    @classmethod
    def from_mesh(cls, mesh: ShishkinMesh, t: int) -> "ElementGeometry":
        edges = mesh.tri_edges[t]
        return cls(
            vertices=mesh.element_vertices(t),
            edge_vertices=mesh.nodes[mesh.edges[edges]],
            edge_normals=mesh.edge_normals[edges],
            edge_signs=mesh.tri_edge_signs[t].copy(),
        )

    @classmethod
    def from_vertices(cls, vertices: np.ndarray) -> "ElementGeometry":
        """Standalone triangle with the global normal convention applied to its own edges."""
        vertices = np.asarray(vertices, dtype=float)
        edge_vertices = np.empty((3, 2, 2))
        normals = np.empty((3, 2))
        signs = np.empty(3)
        for l, (a, b) in enumerate(LOCAL_EDGES):
            edge_vertices[l] = vertices[[a, b]]
            d = vertices[b] - vertices[a]
            outward = np.array([d[1], -d[0]]) / np.hypot(d[0], d[1])
            n = outward.copy()
            if n[0] < 0 or (n[0] == 0 and n[1] < 0):
                n = -n
            normals[l] = n
            signs[l] = 1.0 if outward @ n > 0 else -1.0
        return cls(vertices=vertices, edge_vertices=edge_vertices, edge_normals=normals, edge_signs=signs)

    def translated(self, origin: np.ndarray) -> "ElementGeometry":
        return ElementGeometry(
            vertices=self.vertices - origin,
            edge_vertices=self.edge_vertices - origin,
            edge_normals=self.edge_normals,
            edge_signs=self.edge_signs,
        )

    @property
    def center(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    @property
    def scale(self) -> np.ndarray:
        return np.ptp(self.vertices, axis=0)

    @property
    def area(self) -> float:
        d1 = self.vertices[1] - self.vertices[0]
        d2 = self.vertices[2] - self.vertices[0]
        return 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])

    def edge_length(self, l: int) -> float:
        d = self.edge_vertices[l, 1] - self.edge_vertices[l, 0]
        return float(np.hypot(d[0], d[1]))

    def outward_normal(self, l: int) -> np.ndarray:
        return self.edge_signs[l] * self.edge_normals[l]


@dataclass(frozen=True, eq=False)
class WeakLaplacianOp:
    """Rows of C0/Cb/Cg are the P_{k-2} coefficients of Delta_w of one DOF basis function."""
    space: ScaledMonomials
    mass: np.ndarray   # (Nw, Nw)
    C0: np.ndarray     # (N0, Nw)
    Cb: np.ndarray     # (Nb, Nw)
    Cg: np.ndarray     # (Ng, Nw)

    @property
    def degree(self) -> int:
        return self.space.degree

    def coefficients(self, v: np.ndarray, layout: LocalLayout) -> np.ndarray:
        return (self.C0.T @ v[layout.interior] + self.Cb.T @ v[layout.trace]
                + self.Cg.T @ v[layout.flux])

    def matrix(self) -> np.ndarray:
        """(Nw, local size) map from local DOFs to Delta_w coefficients."""
        return np.hstack([self.C0.T, self.Cb.T, self.Cg.T])


@dataclass(frozen=True, eq=False)
class WeakGradientOp:
    """grad_w v = D^{-1} (-E v0 + F vb) in the basis (psi_p, 0), then (0, psi_p)."""
    space: ScaledMonomials
    D: np.ndarray      # (Nl, Nl) vector mass, SPD
    E: np.ndarray      # (Nl, N0)
    F: np.ndarray      # (Nl, Nb)

    @property
    def degree(self) -> int:
        return self.space.degree

    def coefficients(self, v: np.ndarray, layout: LocalLayout) -> np.ndarray:
        return np.linalg.solve(self.D, -self.E @ v[layout.interior] + self.F @ v[layout.trace])

    def matrix(self, layout: LocalLayout) -> np.ndarray:
        """(Nl, local size) map from local DOFs to grad_w coefficients; flux DOFs do not enter."""
        rhs = np.hstack([-self.E, self.F, np.zeros((self.E.shape[0], layout.ng))])
        return np.linalg.solve(self.D, rhs)

    def evaluate(self, coefficients: np.ndarray, points: np.ndarray) -> np.ndarray:
        psi = self.space.values(points)
        n = self.space.dim
        return np.column_stack([psi @ coefficients[:n], psi @ coefficients[n:]])


def _monomial_space(geometry: ElementGeometry, degree: int) -> ScaledMonomials:
    return ScaledMonomials(degree, geometry.center, geometry.scale)


class WeakOperatorService:

    @staticmethod
    def weak_laplacian_op(
        geometry: ElementGeometry,
        k: int,
        basis: TriBasis,
        tri_rule: QuadRule,
        edge_rule: QuadRule
    ) -> WeakLaplacianOp:
        """
        Solve (Delta_w v, psi)_T = (v0, Delta psi)_T - <vb, grad psi . n>_dT + <vg n_e . n, psi>_dT
        for every DOF basis function and every psi in P_{k-2}(T).
        """
        layout = LocalLayout(k)
        space = _monomial_space(geometry, k - 2)
        points, weights = BasisService.map_tri_rule(tri_rule, geometry.vertices)

        psi = space.values(points)
        mass = psi.T @ (weights[:, None] * psi)
        r0 = space.laplacians(points).T @ (weights[:, None] * basis.values(points))

        rb = np.zeros((space.dim, layout.nb))
        rg = np.zeros((space.dim, layout.ng))
        trace_basis = EdgeBasis(k)
        flux_basis = EdgeBasis(k - 1)
        lb = trace_basis.values(edge_rule.points)
        lg = flux_basis.values(edge_rule.points)
        for l in range(3):
            x = edge_points(geometry.edge_vertices[l], edge_rule.points)
            we = edge_rule.weights * geometry.edge_length(l)
            dpsi_n = space.gradients(x) @ geometry.outward_normal(l)
            rb[:, l * layout.nb_edge:(l + 1) * layout.nb_edge] = -dpsi_n.T @ (we[:, None] * lb)
            rg[:, l * layout.ng_edge:(l + 1) * layout.ng_edge] = (
                geometry.edge_signs[l] * space.values(x).T @ (we[:, None] * lg)
            )

        assert np.all(np.linalg.eigvalsh(mass) > 0), "P_{k-2} mass matrix must be SPD"
        coef = np.linalg.solve(mass, np.hstack([r0, rb, rg]))
        return WeakLaplacianOp(
            space=space,
            mass=mass,
            C0=coef[:, layout.interior].T,
            Cb=coef[:, layout.trace].T,
            Cg=coef[:, layout.flux].T,
        )

    @staticmethod
    def weak_gradient_op(
        geometry: ElementGeometry,
        k: int,
        basis: TriBasis,
        tri_rule: QuadRule,
        edge_rule: QuadRule,
        degree: Optional[int] = None
    ) -> WeakGradientOp:
        """
        Matrices of (grad_w v, psi)_T = -(v0, div psi)_T + <vb, psi . n>_dT
        for psi in [P_l(T)]^2, l = k - 1 unless `degree` says otherwise.
        """
        layout = LocalLayout(k)
        space = _monomial_space(geometry, k - 1 if degree is None else degree)
        n = space.dim
        points, weights = BasisService.map_tri_rule(tri_rule, geometry.vertices)

        psi = space.values(points)
        mass = psi.T @ (weights[:, None] * psi)
        D = np.zeros((2 * n, 2 * n))
        D[:n, :n] = mass
        D[n:, n:] = mass

        dpsi = space.gradients(points)
        divergences = np.hstack([dpsi[:, :, 0], dpsi[:, :, 1]])
        E = divergences.T @ (weights[:, None] * basis.values(points))

        F = np.zeros((2 * n, layout.nb))
        lb = EdgeBasis(k).values(edge_rule.points)
        for l in range(3):
            x = edge_points(geometry.edge_vertices[l], edge_rule.points)
            we = edge_rule.weights * geometry.edge_length(l)
            normal = geometry.outward_normal(l)
            psi_e = space.values(x)
            psi_n = np.hstack([psi_e * normal[0], psi_e * normal[1]])
            F[:, l * layout.nb_edge:(l + 1) * layout.nb_edge] = psi_n.T @ (we[:, None] * lb)

        return WeakGradientOp(space=space, D=D, E=E, F=F)

    @staticmethod
    def lift_polynomial(
        geometry: ElementGeometry,
        k: int,
        basis: TriBasis,
        u,
        grad_u,
        extra_degree: int = 4
    ) -> np.ndarray:
        """
        Local weak function {I0 u, Ib u, Ig(grad u . n_e)}; exact lift when u is in P_k.
        `u(x, y)` and `grad_u(x, y) -> (ux, uy)` take coordinate arrays.
        """
        layout = LocalLayout(k)
        v = np.zeros(layout.size)
        v[layout.interior] = basis.interpolate(u)
        for l in range(3):
            ev = geometry.edge_vertices[l]
            normal = geometry.edge_normals[l]
            v[layout.trace_edge(l)] = BasisService.l2_project_on_edge(u, ev, k, extra_degree)

            def flux(x, y, normal=normal):
                gx, gy = grad_u(x, y)
                return gx * normal[0] + gy * normal[1]

            v[layout.flux_edge(l)] = BasisService.l2_project_on_edge(flux, ev, k - 1, extra_degree)
        return v
