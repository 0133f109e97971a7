"""
Unit tests for MeshService
"""
import math
import pytest
import numpy as np
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '../..'))

from pydantic import ValidationError

from services.errors import MeshParameterError
from services.mesh_service import REGION_CODES, LOCAL_EDGES, MeshParams, MeshService, Region


class TestTransitionParameter:
    """Test the Shishkin transition point."""

    def test_capped_at_quarter(self):
        """Large eps saturates at tau = 1/4."""
        params = MeshParams(N=8, epsilon=0.5, lam=3.0)
        assert MeshService.transition_parameter(params) == 0.25

    def test_layer_value(self):
        """tau = eps * lambda * ln N when that is below 1/4."""
        params = MeshParams(N=32, epsilon=1e-3, lam=3.0)
        assert MeshService.transition_parameter(params) == pytest.approx(3e-3 * math.log(32), rel=1e-14)

    def test_lambda_alias(self):
        """Grading constant accepts the 'lambda' key."""
        params = MeshParams.model_validate({"N": 8, "epsilon": 1e-3, "lambda": 4.0})
        assert params.lam == 4.0

    @pytest.mark.parametrize("n", [0, 2, 6, 10])
    def test_invalid_n_rejected(self, n):
        """N must be a positive multiple of 4."""
        with pytest.raises(ValidationError):
            MeshParams(N=n, epsilon=1e-3, lam=3.0)

    def test_nonpositive_epsilon_rejected(self):
        with pytest.raises(ValidationError):
            MeshParams(N=8, epsilon=0.0, lam=3.0)


class TestAxisPoints:
    """Test the piecewise-uniform 1D point set."""

    def test_n4(self):
        """N = 4, tau = 0.1."""
        points = MeshService.axis_points(4, 0.1)
        assert np.allclose(points, [0.0, 0.1, 0.5, 0.9, 1.0], atol=1e-15)

    def test_n8(self):
        """N = 8, tau = 0.125."""
        points = MeshService.axis_points(8, 0.125)
        expected = [0.0, 0.0625, 0.125, 0.3125, 0.5, 0.6875, 0.875, 0.9375, 1.0]
        assert np.allclose(points, expected, atol=1e-15)

    def test_breakpoints_exact(self):
        """x_{N/4} = tau and x_{3N/4} = 1 - tau bit for bit."""
        tau = 3e-3 * math.log(16)
        points = MeshService.axis_points(16, tau)
        assert points[4] == tau
        assert points[12] == 1.0 - tau
        assert points[0] == 0.0 and points[-1] == 1.0

    def test_strictly_increasing(self):
        points = MeshService.axis_points(64, 1e-5)
        assert np.all(np.diff(points) > 0)

    @pytest.mark.parametrize("n, tau", [(4, 0.3), (4, 0.0), (6, 0.1)])
    def test_invalid_input(self, n, tau):
        """Out-of-range tau or N raise a mesh parameter error."""
        with pytest.raises(MeshParameterError):
            MeshService.axis_points(n, tau)


class TestBuildMesh:
    """Test the triangulation and its classification."""

    def test_counts_and_euler(self, layer_mesh):
        """N = 8: 128 triangles, 81 nodes, 208 edges, V - E + F = 1."""
        assert layer_mesh.n_triangles == 128
        assert layer_mesh.n_nodes == 81
        assert layer_mesh.n_edges == 208
        assert layer_mesh.n_nodes - layer_mesh.n_edges + layer_mesh.n_triangles == 1

    def test_areas_sum_to_one(self, layer_mesh):
        assert layer_mesh.areas().sum() == pytest.approx(1.0, rel=1e-13)

    def test_legs_match_area(self, layer_mesh):
        """Every triangle is half of an hx by hy cell."""
        assert np.allclose(layer_mesh.hx * layer_mesh.hy, 2.0 * layer_mesh.areas(), rtol=1e-12)

    def test_counterclockwise(self, layer_mesh):
        p = layer_mesh.nodes[layer_mesh.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        assert np.all(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] > 0)

    def test_uniform_when_tau_is_quarter(self, uniform_mesh):
        """tau = 1/4 gives h1 = h2 = 1/N."""
        assert uniform_mesh.tau == 0.25
        assert np.allclose(uniform_mesh.hx, 0.25)
        assert np.allclose(uniform_mesh.hy, 0.25)

    def test_boundary_edges(self, layer_mesh):
        """4N boundary edges; every other edge has two triangles."""
        boundary = layer_mesh.boundary_edges
        assert boundary.sum() == 4 * 8
        assert np.all(layer_mesh.edge_triangles[~boundary, 1] >= 0)

    def test_conforming(self, layer_mesh):
        """An interior edge's nodes belong to both adjacent triangles."""
        for e in np.flatnonzero(~layer_mesh.boundary_edges):
            for t in layer_mesh.edge_triangles[e]:
                assert set(layer_mesh.edges[e]) <= set(layer_mesh.triangles[t])

    def test_edges_stored_in_increasing_node_order(self, layer_mesh):
        assert np.all(layer_mesh.edges[:, 0] < layer_mesh.edges[:, 1])

    def test_region_counts(self, layer_mesh):
        """N = 8: 16 interior cells, 32 edge-layer cells and 16 corner cells."""
        counts = MeshService.summary(layer_mesh)["regions"]
        assert counts == {"Omega0": 32, "EdgeLayer": 64, "CornerLayer": 32}

    def test_region_matches_centroid(self, layer_mesh):
        """Omega0 triangles have their centroid inside [tau, 1 - tau]^2."""
        tau = layer_mesh.tau
        centroids = layer_mesh.nodes[layer_mesh.triangles].mean(axis=1)
        inside = np.all((centroids > tau) & (centroids < 1.0 - tau), axis=1)
        assert np.array_equal(inside, layer_mesh.region == REGION_CODES[Region.OMEGA0])

    def test_subregion_areas(self, layer_mesh):
        """The 3x3 partition covers the square: corners tau^2, centre (1 - 2 tau)^2."""
        tau = layer_mesh.tau
        areas = layer_mesh.areas()
        by_sub = np.array([areas[layer_mesh.subregion == s].sum() for s in range(9)])
        assert by_sub.sum() == pytest.approx(1.0, rel=1e-13)
        assert by_sub[0] == pytest.approx(tau ** 2, rel=1e-12)
        assert by_sub[4] == pytest.approx((1 - 2 * tau) ** 2, rel=1e-12)

    def test_region_of(self, layer_mesh):
        t = int(np.flatnonzero(layer_mesh.region == REGION_CODES[Region.CORNER_LAYER])[0])
        assert layer_mesh.region_of(t) == Region.CORNER_LAYER


class TestEdgeNormals:
    """Test the fixed edge normal n_e and its signs."""

    def test_unit_length(self, layer_mesh):
        assert np.allclose(np.linalg.norm(layer_mesh.edge_normals, axis=1), 1.0, atol=1e-15)

    def test_orientation_rule(self, layer_mesh):
        """Horizontal edges get (0, 1), vertical (1, 0), diagonals a positive x-component."""
        d = layer_mesh.nodes[layer_mesh.edges[:, 1]] - layer_mesh.nodes[layer_mesh.edges[:, 0]]
        normals = layer_mesh.edge_normals
        horizontal = d[:, 1] == 0
        vertical = d[:, 0] == 0
        diagonal = ~(horizontal | vertical)
        assert np.all(normals[horizontal] == [0.0, 1.0])
        assert np.all(normals[vertical] == [1.0, 0.0])
        assert np.all(normals[diagonal, 0] > 0)
        assert np.allclose(np.einsum("ij,ij->i", normals, d), 0.0, atol=1e-15)

    def test_deterministic(self):
        """Two builds with the same parameters give bit-identical normals."""
        params = MeshParams(N=8, epsilon=1e-3, lam=3.0)
        first = MeshService.build_mesh(params)
        second = MeshService.build_mesh(params)
        assert np.array_equal(first.edge_normals, second.edge_normals)
        assert np.array_equal(first.tri_edge_signs, second.tri_edge_signs)

    def test_opposite_signs_across_interior_edges(self, layer_mesh):
        """The two triangles sharing an edge see n_e with opposite outward orientation."""
        for e in np.flatnonzero(~layer_mesh.boundary_edges):
            signs = []
            for t in layer_mesh.edge_triangles[e]:
                l = int(np.flatnonzero(layer_mesh.tri_edges[t] == e)[0])
                signs.append(layer_mesh.tri_edge_signs[t, l])
            assert signs[0] == -signs[1]

    def test_signs_against_outward_normal(self, layer_mesh):
        """sign * n_e points away from the opposite vertex."""
        for t in range(layer_mesh.n_triangles):
            vertices = layer_mesh.element_vertices(t)
            for l, (a, b) in enumerate(LOCAL_EDGES):
                opposite = vertices[3 - a - b]
                outward = layer_mesh.tri_edge_signs[t, l] * layer_mesh.edge_normals[layer_mesh.tri_edges[t, l]]
                assert outward @ (vertices[a] - opposite) > 0


class TestLocate:
    """Test point location."""

    def test_centroids(self, layer_mesh):
        centroids = layer_mesh.nodes[layer_mesh.triangles].mean(axis=1)
        assert np.array_equal(MeshService.locate(layer_mesh, centroids), np.arange(layer_mesh.n_triangles))

    def test_corners_of_square(self, layer_mesh):
        """Points on the closing boundary are clamped into the last cells."""
        owners = MeshService.locate(layer_mesh, np.array([[0.0, 0.0], [1.0, 1.0]]))
        assert owners[0] == 0
        assert owners[1] == layer_mesh.n_triangles - 1


class TestSummary:

    def test_summary_fields(self, layer_mesh):
        summary = MeshService.summary(layer_mesh)
        assert summary["N"] == 8
        assert summary["triangles"] == 128
        assert summary["tau"] == layer_mesh.tau
        assert summary["max_aspect_ratio"] == pytest.approx(layer_mesh.h2 / layer_mesh.h1)
        assert summary["min_aspect_ratio"] == pytest.approx(layer_mesh.h1 / layer_mesh.h2)
