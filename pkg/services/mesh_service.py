"""
Shishkin Mesh Service - layer-adapted triangulations of the unit square

Builds the tensor-product Shishkin mesh, splits every cell along its
off-diagonal and classifies triangles into the interior region Omega0,
the four edge layers and the four corner layers.
"""
import math
import time
import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from services.errors import MeshParameterError
from services.solver_logger import SolverLogger


class Region(str, Enum):
    OMEGA0 = "Omega0"
    EDGE_LAYER = "EdgeLayer"
    CORNER_LAYER = "CornerLayer"


# Integer codes stored per triangle, in the order of the enum above
REGION_CODES = {Region.OMEGA0: 0, Region.EDGE_LAYER: 1, Region.CORNER_LAYER: 2}
REGIONS_BY_CODE = {code: region for region, code in REGION_CODES.items()}

# Local edge l of a triangle joins local vertices LOCAL_EDGES[l]
LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


class MeshParams(BaseModel):
    """N cells per axis, perturbation parameter and grading constant."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    N: int
    epsilon: float
    lam: float = Field(alias="lambda")

    @field_validator("N")
    @classmethod
    def _check_n(cls, value: int) -> int:
        if value < 4 or value % 4 != 0:
            raise ValueError("N must be a positive multiple of 4")
        return value

    @field_validator("epsilon", "lam")
    @classmethod
    def _check_positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("must be positive")
        return value


@dataclass(frozen=True, eq=False)
class ShishkinMesh:
    """
    Immutable triangulation of [0,1]^2.

    Triangles are stored counterclockwise in (j, i) lexicographic order of
    their parent cell, lower triangle first. Edges are stored once with their
    node pair in increasing node order; the edge parameter t runs from the
    first node to the second.
    """
    params: MeshParams
    tau: float
    h1: float
    h2: float
    x: np.ndarray                 # axis points, shared by both axes
    nodes: np.ndarray             # (n_nodes, 2)
    triangles: np.ndarray         # (n_tri, 3) node indices, counterclockwise
    cell_index: np.ndarray        # (n_tri, 2) parent cell (i, j)
    upper: np.ndarray             # (n_tri,) True for the upper half of the cell
    hx: np.ndarray                # (n_tri,) nominal leg length along x
    hy: np.ndarray                # (n_tri,) nominal leg length along y
    region: np.ndarray            # (n_tri,) REGION_CODES value
    subregion: np.ndarray         # (n_tri,) 3*row + col in the 3x3 partition
    edges: np.ndarray             # (n_edges, 2) node indices
    edge_triangles: np.ndarray    # (n_edges, 2) adjacent triangles, -1 if absent
    tri_edges: np.ndarray         # (n_tri, 3) global edge of local edge l
    edge_normals: np.ndarray = field(default=None)    # (n_edges, 2) fixed n_e
    tri_edge_signs: np.ndarray = field(default=None)  # (n_tri, 3) n_e . n_outward

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def boundary_edges(self) -> np.ndarray:
        return self.edge_triangles[:, 1] < 0

    def element_vertices(self, t: int) -> np.ndarray:
        return self.nodes[self.triangles[t]]

    def edge_vertices(self, e: int) -> np.ndarray:
        return self.nodes[self.edges[e]]

    def edge_lengths(self) -> np.ndarray:
        d = self.nodes[self.edges[:, 1]] - self.nodes[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def region_of(self, t: int) -> Region:
        return REGIONS_BY_CODE[int(self.region[t])]


class MeshService:
    """Construction and queries for Shishkin triangular meshes."""

    @staticmethod
    def transition_parameter(params: MeshParams) -> float:
        """tau = min{1/4, eps * lambda * ln N}."""
        return min(0.25, params.epsilon * params.lam * math.log(params.N))

    @staticmethod
    def axis_points(N: int, tau: float) -> np.ndarray:
        """Piecewise-uniform 1D Shishkin points x_0 = 0 < ... < x_N = 1."""
        if N < 4 or N % 4 != 0:
            raise MeshParameterError(f"N must be a positive multiple of 4, got {N}")
        if not 0 < tau <= 0.25:
            raise MeshParameterError(f"tau must lie in (0, 1/4], got {tau}")

        q = N // 4
        h1 = 4.0 * tau / N
        h2 = 2.0 * (1.0 - 2.0 * tau) / N
        i = np.arange(N + 1, dtype=float)

        points = np.where(
            i <= q,
            i * h1,
            np.where(i <= 3 * q, tau + (i - q) * h2, 1.0 - tau + (i - 3 * q) * h1),
        )
        # Pin the breakpoints so region tests against tau are exact
        points[0] = 0.0
        points[q] = tau
        points[3 * q] = 1.0 - tau
        points[N] = 1.0
        return points

    @staticmethod
    def build_mesh(params: MeshParams, correlation_id: Optional[str] = None) -> ShishkinMesh:
        """Tensor-product Shishkin mesh split along the off-diagonal of every cell."""
        started = time.perf_counter()
        N = params.N
        tau = MeshService.transition_parameter(params)
        x = MeshService.axis_points(N, tau)
        q = N // 4
        h1 = 4.0 * tau / N
        h2 = 2.0 * (1.0 - 2.0 * tau) / N

        X, Y = np.meshgrid(x, x)
        nodes = np.column_stack([X.ravel(), Y.ravel()])

        jj, ii = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
        ii = ii.ravel()
        jj = jj.ravel()
        n00 = jj * (N + 1) + ii
        n10 = n00 + 1
        n01 = n00 + N + 1
        n11 = n01 + 1

        n_tri = 2 * N * N
        triangles = np.empty((n_tri, 3), dtype=np.int64)
        triangles[0::2] = np.column_stack([n00, n10, n01])
        triangles[1::2] = np.column_stack([n10, n11, n01])

        cell_index = np.repeat(np.column_stack([ii, jj]), 2, axis=0)
        upper = np.tile(np.array([False, True]), N * N)

        cell_h = np.where((np.arange(N) < q) | (np.arange(N) >= 3 * q), h1, h2)
        hx = cell_h[cell_index[:, 0]]
        hy = cell_h[cell_index[:, 1]]

        centroids = nodes[triangles].mean(axis=1)
        col = np.where(centroids[:, 0] < tau, 0, np.where(centroids[:, 0] > 1.0 - tau, 2, 1))
        row = np.where(centroids[:, 1] < tau, 0, np.where(centroids[:, 1] > 1.0 - tau, 2, 1))
        layers = (col != 1).astype(int) + (row != 1).astype(int)
        region = np.choose(layers, [
            REGION_CODES[Region.OMEGA0],
            REGION_CODES[Region.EDGE_LAYER],
            REGION_CODES[Region.CORNER_LAYER],
        ])
        subregion = 3 * row + col

        edge_ids: Dict[tuple, int] = {}
        edges = []
        edge_triangles = []
        tri_edges = np.empty((n_tri, 3), dtype=np.int64)
        for t in range(n_tri):
            for l, (a, b) in enumerate(LOCAL_EDGES):
                na, nb = int(triangles[t, a]), int(triangles[t, b])
                key = (na, nb) if na < nb else (nb, na)
                e = edge_ids.get(key)
                if e is None:
                    e = len(edges)
                    edge_ids[key] = e
                    edges.append(key)
                    edge_triangles.append([t, -1])
                else:
                    edge_triangles[e][1] = t
                tri_edges[t, l] = e

        mesh = ShishkinMesh(
            params=params,
            tau=tau,
            h1=h1,
            h2=h2,
            x=x,
            nodes=nodes,
            triangles=triangles,
            cell_index=cell_index,
            upper=upper,
            hx=hx,
            hy=hy,
            region=region,
            subregion=subregion,
            edges=np.asarray(edges, dtype=np.int64),
            edge_triangles=np.asarray(edge_triangles, dtype=np.int64),
            tri_edges=tri_edges,
        )
        mesh = MeshService.assign_edge_normals(mesh)

        summary = MeshService.summary(mesh)
        summary["seconds"] = round(time.perf_counter() - started, 4)
        SolverLogger.log_mesh_built(summary, correlation_id=correlation_id)
        return mesh

    @staticmethod
    def assign_edge_normals(mesh: ShishkinMesh) -> ShishkinMesh:
        """
        Fix one unit normal per edge: positive x-component, or positive
        y-component when the edge is horizontal. Records the sign of n_e
        against the outward normal of every adjacent triangle.
        """
        p = mesh.nodes[mesh.edges]
        d = p[:, 1] - p[:, 0]
        length = np.hypot(d[:, 0], d[:, 1])
        normals = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
        flip = (normals[:, 0] < 0) | ((normals[:, 0] == 0) & (normals[:, 1] < 0))
        normals[flip] *= -1.0
        # Axis-aligned edges get exact components (no signed zeros)
        normals[d[:, 1] == 0] = (0.0, 1.0)
        normals[d[:, 0] == 0] = (1.0, 0.0)

        signs = np.empty(mesh.tri_edges.shape, dtype=float)
        for l, (a, b) in enumerate(LOCAL_EDGES):
            pa = mesh.nodes[mesh.triangles[:, a]]
            pb = mesh.nodes[mesh.triangles[:, b]]
            t = pb - pa
            outward = np.column_stack([t[:, 1], -t[:, 0]])
            dots = np.einsum("ij,ij->i", outward, normals[mesh.tri_edges[:, l]])
            signs[:, l] = np.where(dots > 0, 1.0, -1.0)

        return dataclasses.replace(mesh, edge_normals=normals, tri_edge_signs=signs)

    @staticmethod
    def locate(mesh: ShishkinMesh, points: np.ndarray) -> np.ndarray:
        """Index of a triangle containing each point of the closed unit square."""
        points = np.atleast_2d(points)
        N = mesh.params.N
        i = np.clip(np.searchsorted(mesh.x, points[:, 0], side="right") - 1, 0, N - 1)
        j = np.clip(np.searchsorted(mesh.x, points[:, 1], side="right") - 1, 0, N - 1)
        s = (points[:, 0] - mesh.x[i]) / (mesh.x[i + 1] - mesh.x[i])
        r = (points[:, 1] - mesh.x[j]) / (mesh.x[j + 1] - mesh.x[j])
        upper = (s + r > 1.0).astype(np.int64)
        return 2 * (j * N + i) + upper

    @staticmethod
    def summary(mesh: ShishkinMesh) -> Dict[str, Any]:
        counts = {region.value: int(np.sum(mesh.region == code)) for region, code in REGION_CODES.items()}
        aspect = mesh.hx / mesh.hy
        return {
            "N": mesh.params.N,
            "epsilon": mesh.params.epsilon,
            "lambda": mesh.params.lam,
            "tau": mesh.tau,
            "h1": mesh.h1,
            "h2": mesh.h2,
            "nodes": mesh.n_nodes,
            "edges": mesh.n_edges,
            "triangles": mesh.n_triangles,
            "regions": counts,
            "min_aspect_ratio": float(min(aspect.min(), (1.0 / aspect).min())),
            "max_aspect_ratio": float(max(aspect.max(), (1.0 / aspect).max())),
        }
