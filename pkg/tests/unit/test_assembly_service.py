"""
Unit tests for AssemblyService
"""
import logging
import math
import pytest
import numpy as np
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '../..'))

from config import Config
from services.assembly_service import AssemblyService, DofMap
from services.basis_service import BasisService, EdgeBasis, TriBasis
from services.errors import AssemblyError
from services.mesh_service import MeshParams, MeshService, Region
from services.problem_service import ProblemSpec
from services.solver_service import SolverService
from services.weak_operator_service import ElementGeometry, LocalLayout


def _ones(px, py):
    return np.ones_like(px)


def _reaction_problem(epsilon=1e-3, source=1.0):
    return ProblemSpec(name="reaction", epsilon=epsilon, a=_ones, g=lambda px, py: source * np.ones_like(px))


def _constant_weak_function(k):
    """v0 = 1, vb = 1 on every edge, vg = 0."""
    layout = LocalLayout(k)
    v = np.zeros(layout.size)
    v[layout.interior] = 1.0
    for l in range(3):
        v[layout.trace_edge(l).start] = 1.0
    return v


def _gauss(n):
    """n-point Gauss-Legendre rule on [0, 1]."""
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (t + 1.0), 0.5 * w


def _collapsed_rule(vertices, n):
    """Tensor Gauss rule pulled back to the triangle through the collapsed square."""
    t, w = _gauss(n)
    u, v = np.meshgrid(t, t, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    xi, eta = u.ravel(), ((1.0 - u) * v).ravel()
    v0, v1, v2 = vertices
    e1, e2 = v1 - v0, v2 - v0
    jacobian = abs(e1[0] * e2[1] - e1[1] * e2[0])
    points = v0 + np.outer(xi, e1) + np.outer(eta, e2)
    return points, (wu * wv * (1.0 - u)).ravel() * jacobian


def _monomials(vertices, degree):
    """Bounding-box scaled monomials with values, x- and y-derivatives and Laplacians."""
    center = vertices.mean(axis=0)
    size = vertices.max(axis=0) - vertices.min(axis=0)
    exponents = [(a, d - a) for d in range(degree + 1) for a in range(d, -1, -1)]

    def evaluate(points):
        x = (points[:, 0] - center[0]) / size[0]
        y = (points[:, 1] - center[1]) / size[1]

        def power(s, e):
            return s ** e if e >= 0 else np.zeros_like(s)

        value = np.column_stack([power(x, a) * power(y, b) for a, b in exponents])
        dx = np.column_stack([a * power(x, a - 1) * power(y, b) / size[0] for a, b in exponents])
        dy = np.column_stack([b * power(x, a) * power(y, b - 1) / size[1] for a, b in exponents])
        lap = np.column_stack([
            a * (a - 1) * power(x, a - 2) * power(y, b) / size[0] ** 2
            + b * (b - 1) * power(x, a) * power(y, b - 2) / size[1] ** 2
            for a, b in exponents
        ])
        return value, dx, dy, lap
    return evaluate


def _brute_force_stiffness(geometry, k, epsilon, a):
    """
    eps^2 (Delta_w u, Delta_w v) + (grad_w u, grad_w v) + (a u0, v0) built from scratch:
    Delta_w and grad_w of every unit DOF vector come from their defining identities with
    Gauss-Legendre quadrature and a monomial mass solve, and are then integrated pointwise.
    """
    layout = LocalLayout(k)
    vertices = geometry.vertices
    basis = TriBasis(vertices, k)
    points, weights = _collapsed_rule(vertices, 2 * k + 2)
    t, tw = _gauss(k + 3)
    lap_space = _monomials(vertices, k - 2)
    grad_space = _monomials(vertices, k - 1)

    psi, psi_x, psi_y, psi_lap = lap_space(points)
    chi, chi_x, chi_y, _ = grad_space(points)
    phi = basis.values(points)
    m, n = psi.shape[1], chi.shape[1]

    lap_rhs = np.zeros((m, layout.size))
    grad_rhs = np.zeros((2 * n, layout.size))
    lap_rhs[:, layout.interior] = psi_lap.T @ (weights[:, None] * phi)
    grad_rhs[:n, layout.interior] = -chi_x.T @ (weights[:, None] * phi)
    grad_rhs[n:, layout.interior] = -chi_y.T @ (weights[:, None] * phi)

    for l in range(3):
        p, q = geometry.edge_vertices[l]
        opposite = next(vertex for vertex in vertices
                        if not (np.array_equal(vertex, p) or np.array_equal(vertex, q)))
        d = q - p
        outward = np.array([d[1], -d[0]]) / np.hypot(d[0], d[1])
        if outward @ (opposite - p) > 0:
            outward = -outward
        x = p + np.outer(t, d)
        w = tw * np.hypot(d[0], d[1])
        trace = EdgeBasis(k).values(t)
        flux = EdgeBasis(k - 1).values(t) * (geometry.edge_normals[l] @ outward)

        e_psi, e_psi_x, e_psi_y, _ = lap_space(x)
        e_chi = grad_space(x)[0]
        dpsi_n = e_psi_x * outward[0] + e_psi_y * outward[1]
        lap_rhs[:, layout.trace_edge(l)] -= dpsi_n.T @ (w[:, None] * trace)
        lap_rhs[:, layout.flux_edge(l)] += e_psi.T @ (w[:, None] * flux)
        grad_rhs[:n, layout.trace_edge(l)] += outward[0] * e_chi.T @ (w[:, None] * trace)
        grad_rhs[n:, layout.trace_edge(l)] += outward[1] * e_chi.T @ (w[:, None] * trace)

    lap_values = psi @ np.linalg.solve(psi.T @ (weights[:, None] * psi), lap_rhs)
    chi_mass = chi.T @ (weights[:, None] * chi)
    gx = chi @ np.linalg.solve(chi_mass, grad_rhs[:n])
    gy = chi @ np.linalg.solve(chi_mass, grad_rhs[n:])

    W = weights[:, None]
    S = epsilon ** 2 * lap_values.T @ (W * lap_values) + gx.T @ (W * gx) + gy.T @ (W * gy)
    a_values = a(points[:, 0], points[:, 1])
    S[layout.interior, layout.interior] += phi.T @ ((weights * a_values)[:, None] * phi)
    return S


class TestElementMatrices:
    """Test A_T, B_T and C_T."""

    def test_laplacian_mass_on_reference(self, operator_set_k2):
        """eps = 1, k = 2: A_T is the P_0 mass, |T| = 1/2."""
        mats = AssemblyService.element_matrices(operator_set_k2, 1.0, _ones)
        assert mats.A.shape == (1, 1)
        assert mats.A[0, 0] == pytest.approx(0.5, rel=1e-14)

    def test_reaction_mass(self, operator_set_k2, reference_triangle):
        """a = 1: C_T is the P_2 Lagrange mass; its entries sum to |T|."""
        mats = AssemblyService.element_matrices(operator_set_k2, 1.0, _ones)
        assert mats.C.sum() == pytest.approx(0.5, rel=1e-13)

        basis = TriBasis(reference_triangle, 2)
        points, weights = BasisService.map_tri_rule(BasisService.tri_quadrature(12), reference_triangle)
        phi = basis.values(points)
        assert np.allclose(mats.C, phi.T @ (weights[:, None] * phi), atol=1e-14)

    def test_zero_reaction(self, operator_set_k2):
        mats = AssemblyService.element_matrices(operator_set_k2, 1.0, lambda px, py: 0.0 * px)
        assert np.all(mats.C == 0.0)

    def test_vector_mass_blocks(self, operator_set_k2):
        mats = AssemblyService.element_matrices(operator_set_k2, 1.0, _ones)
        n = mats.B.shape[0] // 2
        assert np.allclose(mats.B[:n, :n], mats.B[n:, n:])
        assert np.all(mats.B[:n, n:] == 0.0)


class TestLocalStiffness:
    """Test the block formulas of S_T."""

    @pytest.mark.parametrize("k", [2, 3])
    def test_blocks_match_brute_force(self, random_elements, k):
        """Block formulas agree with weak operators rebuilt from their definitions."""
        def a(px, py):
            return 1.0 + px

        for geometry in random_elements:
            ops = AssemblyService.build_operator_set(geometry, k)
            origin = geometry.vertices[0]
            local = AssemblyService.local_stiffness(ops, 1e-2, a, origin=origin)
            expected = _brute_force_stiffness(geometry, k, 1e-2, a)
            scale = float(np.abs(expected).max())
            assert np.allclose(local.bilinear, expected, atol=1e-9 * scale)

    def test_symmetric(self, operator_set_k2):
        local = AssemblyService.local_stiffness(operator_set_k2, 0.1, _ones, rho=2.0, sigma=5.0)
        assert np.array_equal(local.matrix, local.matrix.T)

    def test_block_access(self, operator_set_k2):
        local = AssemblyService.local_stiffness(operator_set_k2, 0.1, _ones)
        layout = LocalLayout(2)
        assert local.block("0", "b").shape == (layout.n0, layout.nb)
        assert np.allclose(local.block("b", "0"), local.block("0", "b").T)
        assert local.block("g", "g").shape == (layout.ng, layout.ng)

    def test_flux_block_only_from_laplacian(self, operator_set_k2):
        """With eps = 0 the vg rows and columns vanish."""
        local = AssemblyService.local_stiffness(operator_set_k2, 0.0, _ones)
        assert np.allclose(local.block("g", "g"), 0.0)
        assert np.allclose(local.block("0", "g"), 0.0)

    @pytest.mark.parametrize("k", [2, 3])
    def test_constants_in_kernel(self, reference_geometry, k):
        """With a = 0 the weak constant has zero energy, stabilizer included."""
        ops = AssemblyService.build_operator_set(reference_geometry, k)
        local = AssemblyService.local_stiffness(ops, 0.3, lambda px, py: 0.0 * px, rho=1.0, sigma=1.0)
        v = _constant_weak_function(k)
        assert np.allclose(local.matrix @ v, 0.0, atol=1e-11)

    def test_positive_semidefinite(self, random_elements):
        for geometry in random_elements[:6]:
            ops = AssemblyService.build_operator_set(geometry, 2)
            local = AssemblyService.local_stiffness(ops, 1e-3, _ones, rho=1.0, sigma=1.0,
                                                    origin=geometry.vertices[0])
            eigenvalues = np.linalg.eigvalsh(local.matrix)
            assert eigenvalues.min() > -1e-10 * eigenvalues.max()


class TestStabilizer:
    """Test rho_T, sigma_T and the jump terms."""

    def test_parameters_in_omega0(self):
        """eps = 1e-3, N = 32: rho = 0.032, sigma = 32."""
        rho, sigma = AssemblyService.stabilizer_parameters(Region.OMEGA0, 1e-3, 32)
        assert rho == pytest.approx(0.032, rel=1e-14)
        assert sigma == 32.0

    @pytest.mark.parametrize("region", [Region.EDGE_LAYER, Region.CORNER_LAYER])
    def test_parameters_in_layers(self, region):
        """rho = eps N / ln N, sigma = (N / ln N)^3 / eps."""
        rho, sigma = AssemblyService.stabilizer_parameters(region, 1e-3, 32)
        assert rho == pytest.approx(0.032 / math.log(32), rel=1e-14)
        assert sigma == pytest.approx(1e3 * (32 / math.log(32)) ** 3, rel=1e-14)
        assert sigma == pytest.approx(7.872e5, rel=1e-3)

    def test_unit_trace_jump(self):
        """v0 = 0, vb = 1 on one edge of length h: s(v, v) = sigma h."""
        h = 0.25
        geometry = ElementGeometry.from_vertices(np.array([[0.0, 0.0], [h, 0.0], [0.0, h]]))
        layout = LocalLayout(2)
        v = np.zeros(layout.size)
        v[layout.trace_edge(0).start] = 1.0
        S = AssemblyService.stabilizer_local(geometry, 2, rho=0.0, sigma=3.0)
        assert v @ S @ v == pytest.approx(3.0 * h, rel=1e-13)

    def test_unit_flux_jump(self):
        """v0 = 0, vg = 1 on one edge of length h: s(v, v) = rho h."""
        h = 0.25
        geometry = ElementGeometry.from_vertices(np.array([[0.0, 0.0], [h, 0.0], [0.0, h]]))
        layout = LocalLayout(2)
        v = np.zeros(layout.size)
        v[layout.flux_edge(0).start] = 1.0
        S = AssemblyService.stabilizer_local(geometry, 2, rho=2.0, sigma=0.0)
        assert v @ S @ v == pytest.approx(2.0 * h, rel=1e-13)

    @pytest.mark.parametrize("k", [2, 3])
    def test_vanishes_on_polynomial_lifts(self, rng, reference_geometry, k):
        """Jumps of an exact P_k lift are zero."""
        from services.weak_operator_service import WeakOperatorService
        basis = TriBasis(reference_geometry.vertices, k)
        v = WeakOperatorService.lift_polynomial(
            reference_geometry, k, basis,
            lambda px, py: px ** 2 - 3 * px * py + py,
            lambda px, py: (2 * px - 3 * py, 1.0 - 3 * px),
        )
        S = AssemblyService.stabilizer_local(reference_geometry, k, rho=1.0, sigma=1.0)
        assert abs(v @ S @ v) <= 1e-20


class TestDofMap:
    """Test the global DOF numbering."""

    def test_counts_n4_k2(self, uniform_mesh):
        """N = 4, k = 2: 192 interior, 168 trace and 112 flux DOFs."""
        dofmap = DofMap(k=2, n_triangles=uniform_mesh.n_triangles, n_edges=uniform_mesh.n_edges,
                        boundary_edges=uniform_mesh.boundary_edges)
        counts = dofmap.counts()
        assert counts["interior"] == 192
        assert counts["trace"] == 168
        assert counts["flux"] == 112
        assert counts["total"] == 472
        assert counts["boundary"] == 16 * (3 + 2)

    def test_local_to_global_layout(self, uniform_mesh):
        dofmap = DofMap(k=3, n_triangles=uniform_mesh.n_triangles, n_edges=uniform_mesh.n_edges,
                        boundary_edges=uniform_mesh.boundary_edges)
        layout = LocalLayout(3)
        dofs = dofmap.local_to_global(uniform_mesh.tri_edges, 7)
        assert dofs.size == layout.size
        assert np.array_equal(dofs[layout.interior], dofmap.interior(7))
        e = int(uniform_mesh.tri_edges[7, 1])
        assert np.array_equal(dofs[layout.trace_edge(1)], dofmap.trace(e))
        assert np.array_equal(dofs[layout.flux_edge(1)], dofmap.flux(e))

    def test_shared_edges_share_dofs(self, uniform_mesh):
        dofmap = DofMap(k=2, n_triangles=uniform_mesh.n_triangles, n_edges=uniform_mesh.n_edges,
                        boundary_edges=uniform_mesh.boundary_edges)
        e = int(np.flatnonzero(~uniform_mesh.boundary_edges)[0])
        t1, t2 = uniform_mesh.edge_triangles[e]
        shared = set(dofmap.local_to_global(uniform_mesh.tri_edges, t1)) & set(
            dofmap.local_to_global(uniform_mesh.tri_edges, t2))
        assert shared == set(dofmap.trace(e)) | set(dofmap.flux(e))


class TestAssemble:
    """Test the global system."""

    def test_symmetric(self, layer_mesh):
        system = AssemblyService.assemble(layer_mesh, 2, _reaction_problem())
        assert abs(system.A - system.A.T).max() <= 1e-14 * abs(system.A).max()
        assert system.A.shape == (system.free.size, system.free.size)

    def test_positive_definite(self, layer_mesh):
        """Reduced operator on N = 8, eps^2 = 1e-6 is SPD."""
        system = AssemblyService.assemble(layer_mesh, 2, _reaction_problem())
        assert system.A.shape[0] == 1648
        assert np.linalg.eigvalsh(system.A.toarray()).min() > 0

    def test_parallel_matches_serial(self, layer_mesh):
        serial = AssemblyService.assemble(layer_mesh, 2, _reaction_problem(), workers=1)
        parallel = AssemblyService.assemble(layer_mesh, 2, _reaction_problem(), workers=3)
        assert (serial.A_full != parallel.A_full).nnz == 0
        assert np.array_equal(serial.b, parallel.b)

    def test_zero_source_gives_zero_solution(self, uniform_mesh):
        system = AssemblyService.assemble(uniform_mesh, 2, _reaction_problem(source=0.0))
        assert np.all(system.b == 0.0)
        x, report = SolverService.solve(system.A, system.b)
        assert np.all(x == 0.0)
        assert report.iterations == 0
        assert report.refinement_steps == 0

    def test_solution_linear_in_source(self, uniform_mesh):
        one = AssemblyService.assemble(uniform_mesh, 3, _reaction_problem(epsilon=0.5, source=1.0))
        three = AssemblyService.assemble(uniform_mesh, 3, _reaction_problem(epsilon=0.5, source=3.0))
        x1, _ = SolverService.solve(one.A, one.b)
        x3, _ = SolverService.solve(three.A, three.b)
        assert np.allclose(x3, 3.0 * x1, rtol=1e-9, atol=1e-14)

    def test_homogeneous_boundary_values(self, uniform_mesh):
        system = AssemblyService.assemble(uniform_mesh, 2, _reaction_problem())
        assert np.all(system.boundary_values == 0.0)
        assert np.all(system.expand(np.zeros(system.free.size)) == 0.0)

    def test_from_exact_boundary_values(self, uniform_mesh, patch_problem_k2):
        """Boundary traces of x^2 + xy on y = 0 are the projection of x^2."""
        system = AssemblyService.assemble(uniform_mesh, 2, patch_problem_k2)
        bottom = [e for e in np.flatnonzero(uniform_mesh.boundary_edges)
                  if np.all(uniform_mesh.edge_vertices(int(e))[:, 1] == 0.0)]
        e = int(bottom[1])
        ev = uniform_mesh.edge_vertices(e)
        expected = BasisService.l2_project_on_edge(lambda px, py: px ** 2, ev, 2)
        assert np.allclose(system.boundary_values[system.dofmap.trace(e)], expected, atol=1e-14)
        assert np.all(system.boundary_values[system.free] == 0.0)

    def test_shared_operator_sets_match_direct_build(self, layer_mesh):
        """Triangles reusing a cached operator set get the matrices they would build themselves."""
        sets = AssemblyService.operator_sets(layer_mesh, 2)
        assert len({id(ops) for ops in sets}) < layer_mesh.n_triangles
        for t in (3, 50, 77, 127):
            direct = AssemblyService.build_operator_set(ElementGeometry.from_mesh(layer_mesh, t), 2)
            scale = float(np.abs(direct.gradient_part).max())
            assert np.allclose(sets[t].gradient_part, direct.gradient_part, atol=1e-10 * scale)
            assert np.allclose(sets[t].trace_jump, direct.trace_jump, atol=1e-12)

    def test_unsupported_degree(self, uniform_mesh):
        with pytest.raises(AssemblyError):
            AssemblyService.assemble(uniform_mesh, 4, _reaction_problem())

    def test_conditioning_event(self, monkeypatch, caplog, uniform_mesh):
        monkeypatch.setattr(Config, "WG_CONDITIONING_WARN", 1e-3)
        with caplog.at_level(logging.WARNING, logger="wg.solver"):
            AssemblyService.assemble(uniform_mesh, 2, _reaction_problem())
        assert "conditioning_warning" in caplog.text

    def test_small_mesh_counts(self):
        mesh = MeshService.build_mesh(MeshParams(N=4, epsilon=1e-2, lam=3.0))
        system = AssemblyService.assemble(mesh, 2, _reaction_problem(epsilon=1e-2))
        assert system.dofmap.size == 472
        assert system.free.size == 472 - 80
