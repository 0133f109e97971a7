"""
Basis Service - polynomial bases and quadrature on triangles and edges

Lagrange bases on the principal lattice for P_k(T), scaled monomials for the
weak operator target spaces, shifted Legendre bases along edges, and Gauss
rules on the reference triangle and interval.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, List, Optional, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss, legvander

from services.errors import QuadratureError

# Highest triangle exactness we hand out; collapsed rules grow quadratically
MAX_TRI_DEGREE = 40


@dataclass(frozen=True, eq=False)
class QuadRule:
    """Points and weights on the reference triangle {x, y >= 0, x + y <= 1} or on [0, 1]."""
    points: np.ndarray
    weights: np.ndarray
    degree: int
    measure: float

    @property
    def size(self) -> int:
        return self.weights.shape[0]


def _freeze(*arrays: np.ndarray) -> None:
    for array in arrays:
        array.setflags(write=False)


class BasisService:

    @staticmethod
    @lru_cache(maxsize=None)
    def edge_quadrature(npts: int) -> QuadRule:
        """Gauss-Legendre rule on [0, 1], exact to degree 2*npts - 1."""
        if npts < 1:
            raise QuadratureError(f"Edge rule needs at least one point, got {npts}")
        points, weights = leggauss(npts)
        points = (points + 1.0) / 2.0
        weights = weights / 2.0
        _freeze(points, weights)
        return QuadRule(points=points, weights=weights, degree=2 * npts - 1, measure=1.0)

    @staticmethod
    @lru_cache(maxsize=None)
    def tri_quadrature(degree: int) -> QuadRule:
        """
        Collapsed Gauss rule on the reference triangle (Duffy transform of a
        tensor Gauss rule). Weights are positive and the rule integrates every
        polynomial of total degree <= degree exactly.
        """
        if degree < 1 or degree > MAX_TRI_DEGREE:
            raise QuadratureError(f"Triangle rule of degree {degree} not supported (1..{MAX_TRI_DEGREE})")

        outer = BasisService.edge_quadrature((degree + 3) // 2)
        inner = BasisService.edge_quadrature((degree + 2) // 2)

        p, q = np.meshgrid(outer.points, inner.points, indexing="ij")
        wp, wq = np.meshgrid(outer.weights, inner.weights, indexing="ij")
        points = np.column_stack([p.ravel(), (q * (1.0 - p)).ravel()])
        weights = (wp * wq * (1.0 - p)).ravel()
        _freeze(points, weights)
        return QuadRule(points=points, weights=weights, degree=degree, measure=0.5)

    @staticmethod
    def map_tri_rule(rule: QuadRule, vertices: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Physical points and weights of a reference rule on triangle `vertices`."""
        v0 = vertices[0]
        jac = np.column_stack([vertices[1] - v0, vertices[2] - v0])
        det = abs(np.linalg.det(jac))
        return v0 + rule.points @ jac.T, rule.weights * det

    @staticmethod
    def lagrange_interpolate_on_tri(f: Callable, vertices: np.ndarray, k: int) -> np.ndarray:
        """Coefficients of I_0 f in the Lagrange basis of P_k(T): nodal values."""
        nodes = lattice_nodes(vertices, k)
        return np.asarray(f(nodes[:, 0], nodes[:, 1]), dtype=float) * np.ones(nodes.shape[0])

    @staticmethod
    def l2_project_on_edge(
        f: Callable,
        edge_vertices: np.ndarray,
        d: int,
        extra_degree: int = 4,
        npts: Optional[int] = None
    ) -> np.ndarray:
        """
        L2(e) projection of f onto P_d(e) in the shifted Legendre basis of the
        edge parameter. The rule is exact to at least 2d + extra_degree.
        """
        if npts is None:
            npts = (2 * d + extra_degree + 2) // 2
        rule = BasisService.edge_quadrature(npts)
        basis = EdgeBasis(d)
        length = float(np.linalg.norm(edge_vertices[1] - edge_vertices[0]))
        points = edge_points(edge_vertices, rule.points)
        phi = basis.values(rule.points)
        weights = rule.weights * length

        mass = phi.T @ (weights[:, None] * phi)
        rhs = phi.T @ (weights * np.asarray(f(points[:, 0], points[:, 1]), dtype=float))
        assert np.all(np.linalg.eigvalsh(mass) > 0), "edge mass matrix must be SPD"
        return np.linalg.solve(mass, rhs)


def monomial_exponents(degree: int) -> List[Tuple[int, int]]:
    """(a, b) with a + b <= degree, graded by total degree."""
    return [(total - b, b) for total in range(degree + 1) for b in range(total + 1)]


def dim_p(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2 if degree >= 0 else 0


def _falling(n: int, p: int) -> float:
    out = 1.0
    for r in range(p):
        out *= n - r
    return out


def lattice_nodes(vertices: np.ndarray, k: int) -> np.ndarray:
    """Principal lattice of degree k on the triangle, rows of increasing j then i."""
    v0, v1, v2 = vertices
    return np.array([
        v0 + (i / k) * (v1 - v0) + (j / k) * (v2 - v0)
        for j in range(k + 1)
        for i in range(k + 1 - j)
    ])


def edge_points(edge_vertices: np.ndarray, t: np.ndarray) -> np.ndarray:
    return edge_vertices[0] + np.outer(t, edge_vertices[1] - edge_vertices[0])


class ScaledMonomials:
    """
    Monomials ((x - cx)/sx)^a ((y - cy)/sy)^b of total degree <= degree.
    Centering and per-axis scaling keep anisotropic elements well conditioned.
    """

    def __init__(self, degree: int, center: np.ndarray, scale: np.ndarray):
        self.degree = degree
        self.center = np.asarray(center, dtype=float)
        self.scale = np.asarray(scale, dtype=float)
        self.exponents = monomial_exponents(degree)

    @property
    def dim(self) -> int:
        return len(self.exponents)

    def derivative(self, points: np.ndarray, px: int, py: int) -> np.ndarray:
        """d^px/dx^px d^py/dy^py of every monomial at `points`, shape (n_points, dim)."""
        points = np.atleast_2d(points)
        xi = (points[:, 0] - self.center[0]) / self.scale[0]
        eta = (points[:, 1] - self.center[1]) / self.scale[1]
        out = np.zeros((points.shape[0], self.dim))
        factor = self.scale[0] ** px * self.scale[1] ** py
        for m, (a, b) in enumerate(self.exponents):
            if a < px or b < py:
                continue
            out[:, m] = _falling(a, px) * _falling(b, py) / factor * xi ** (a - px) * eta ** (b - py)
        return out

    def values(self, points: np.ndarray) -> np.ndarray:
        return self.derivative(points, 0, 0)

    def gradients(self, points: np.ndarray) -> np.ndarray:
        return np.stack([self.derivative(points, 1, 0), self.derivative(points, 0, 1)], axis=-1)

    def laplacians(self, points: np.ndarray) -> np.ndarray:
        return self.derivative(points, 2, 0) + self.derivative(points, 0, 2)

    def grad_laplacians(self, points: np.ndarray) -> np.ndarray:
        gx = self.derivative(points, 3, 0) + self.derivative(points, 1, 2)
        gy = self.derivative(points, 2, 1) + self.derivative(points, 0, 3)
        return np.stack([gx, gy], axis=-1)


class TriBasis:
    """
    Lagrange basis of P_k(T) on the principal lattice. Derivatives come from
    the monomial-to-Lagrange transform computed once per element.
    """

    def __init__(self, vertices: np.ndarray, k: int):
        if k < 1:
            raise ValueError("degree must be at least 1")
        self.vertices = np.asarray(vertices, dtype=float)
        self.k = k
        center = self.vertices.mean(axis=0)
        scale = np.ptp(self.vertices, axis=0)
        self.monomials = ScaledMonomials(k, center, scale)
        self.nodes = lattice_nodes(self.vertices, k)
        # phi_i = sum_m transform[m, i] * monomial_m
        self.transform = np.linalg.inv(self.monomials.values(self.nodes))

    @property
    def dim(self) -> int:
        return self.monomials.dim

    def values(self, points: np.ndarray) -> np.ndarray:
        return self.monomials.values(points) @ self.transform

    def gradients(self, points: np.ndarray) -> np.ndarray:
        return np.einsum("pmd,mi->pid", self.monomials.gradients(points), self.transform)

    def laplacians(self, points: np.ndarray) -> np.ndarray:
        return self.monomials.laplacians(points) @ self.transform

    def grad_laplacians(self, points: np.ndarray) -> np.ndarray:
        return np.einsum("pmd,mi->pid", self.monomials.grad_laplacians(points), self.transform)

    def interpolate(self, f: Callable) -> np.ndarray:
        return np.asarray(f(self.nodes[:, 0], self.nodes[:, 1]), dtype=float) * np.ones(self.dim)


class EdgeBasis:
    """Shifted Legendre polynomials P_j(2t - 1), j <= degree, of the edge parameter t."""

    def __init__(self, degree: int):
        if degree < 0:
            raise ValueError("degree must be non-negative")
        self.degree = degree

    @property
    def dim(self) -> int:
        return self.degree + 1

    def values(self, t: np.ndarray) -> np.ndarray:
        return legvander(2.0 * np.asarray(t, dtype=float) - 1.0, self.degree)

    def mass(self, length: float, rule: Optional[QuadRule] = None) -> np.ndarray:
        rule = rule or BasisService.edge_quadrature(self.degree + 1)
        phi = self.values(rule.points)
        return length * phi.T @ (rule.weights[:, None] * phi)
