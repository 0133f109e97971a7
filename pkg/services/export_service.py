"""
Export Service - solution fields, meshes and matrices on disk

Legacy-VTK ASCII for plotting tools, CSV for everything tabular and
MatrixMarket for the reduced system matrix. Every file is written to a
temporary name first and moved into place.
"""
import io
import logging
import os
import tempfile
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.io
import scipy.sparse as sp

from config import config
from services.assembly_service import GlobalSystem
from services.mesh_service import REGIONS_BY_CODE, MeshService, ShishkinMesh
from services.problem_service import ProblemSpec
from services.solver_logger import SolverLogger

logger = logging.getLogger(__name__)

MESH_NODE_COLUMNS = ("node", "x", "y")
MESH_TRIANGLE_COLUMNS = ("triangle", "n0", "n1", "n2", "i", "j", "upper", "hx", "hy", "region", "subregion")
SOLUTION_COLUMNS = ("x", "y", "u_h", "u_exact")


def write_atomic(path: str, text: str) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path


def _fmt(value: float) -> str:
    return repr(float(value))


class ExportService:

    @staticmethod
    def sample_solution(
        system: GlobalSystem,
        solution: np.ndarray,
        grid_points: Optional[int] = None
    ) -> Tuple[np.ndarray, np.ndarray]:
        """
        Evaluate u0 of a full weak DOF vector on a uniform grid of the unit
        square, using the polynomial of the triangle that contains each point.
        Returns (points, values) with points in x-fastest order.
        """
        n = grid_points or config.WG_PLOT_GRID_POINTS
        axis = np.linspace(0.0, 1.0, n)
        X, Y = np.meshgrid(axis, axis)
        points = np.column_stack([X.ravel(), Y.ravel()])

        mesh = system.mesh
        owners = MeshService.locate(mesh, points)
        values = np.empty(points.shape[0])
        for t in np.unique(owners):
            mask = owners == t
            ops = system.element_ops[t]
            origin = mesh.nodes[mesh.triangles[t, 0]]
            coefficients = solution[system.dofmap.interior(int(t))]
            values[mask] = ops.basis.values(points[mask] - origin) @ coefficients
        return points, values

    @staticmethod
    def export_solution(
        system: GlobalSystem,
        solution: np.ndarray,
        prefix: str,
        problem: Optional[ProblemSpec] = None,
        grid_points: Optional[int] = None,
        correlation_id: Optional[str] = None
    ) -> Dict[str, str]:
        """Write `<prefix>_solution.csv` and `<prefix>_solution.vtk` with u_h and, if known, u."""
        n = grid_points or config.WG_PLOT_GRID_POINTS
        points, values = ExportService.sample_solution(system, solution, n)
        exact = None
        if problem is not None and problem.exact is not None:
            exact = problem.exact.u(points[:, 0], points[:, 1])

        csv = io.StringIO()
        csv.write(",".join(SOLUTION_COLUMNS if exact is not None else SOLUTION_COLUMNS[:3]) + "\n")
        for i, (px, py) in enumerate(points):
            row = [_fmt(px), _fmt(py), _fmt(values[i])]
            if exact is not None:
                row.append(_fmt(exact[i]))
            csv.write(",".join(row) + "\n")

        spacing = 1.0 / (n - 1)
        vtk = io.StringIO()
        vtk.write("# vtk DataFile Version 3.0\n")
        vtk.write("weak Galerkin solution sampled on a uniform grid\n")
        vtk.write("ASCII\n")
        vtk.write("DATASET STRUCTURED_POINTS\n")
        vtk.write(f"DIMENSIONS {n} {n} 1\n")
        vtk.write("ORIGIN 0 0 0\n")
        vtk.write(f"SPACING {_fmt(spacing)} {_fmt(spacing)} 1\n")
        vtk.write(f"POINT_DATA {points.shape[0]}\n")
        fields = [("u_h", values)] + ([("u_exact", exact)] if exact is not None else [])
        for name, field in fields:
            vtk.write(f"SCALARS {name} double 1\n")
            vtk.write("LOOKUP_TABLE default\n")
            vtk.write("\n".join(_fmt(v) for v in field) + "\n")

        paths = {
            "csv": write_atomic(f"{prefix}_solution.csv", csv.getvalue()),
            "vtk": write_atomic(f"{prefix}_solution.vtk", vtk.getvalue()),
        }
        for kind, path in paths.items():
            SolverLogger.log_export(path, f"solution-{kind}", correlation_id=correlation_id)
        return paths

    @staticmethod
    def export_mesh(mesh: ShishkinMesh, prefix: str, correlation_id: Optional[str] = None) -> Dict[str, str]:
        """
        `<prefix>_mesh.vtk` (POLYDATA triangles with region cell data),
        `<prefix>_nodes.csv` and `<prefix>_triangles.csv`.
        """
        vtk = io.StringIO()
        vtk.write("# vtk DataFile Version 3.0\n")
        vtk.write(f"Shishkin mesh N={mesh.params.N} tau={_fmt(mesh.tau)}\n")
        vtk.write("ASCII\n")
        vtk.write("DATASET POLYDATA\n")
        vtk.write(f"POINTS {mesh.n_nodes} double\n")
        for px, py in mesh.nodes:
            vtk.write(f"{_fmt(px)} {_fmt(py)} 0\n")
        vtk.write(f"POLYGONS {mesh.n_triangles} {4 * mesh.n_triangles}\n")
        for tri in mesh.triangles:
            vtk.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n")
        vtk.write(f"CELL_DATA {mesh.n_triangles}\n")
        for name, field in (("region", mesh.region), ("subregion", mesh.subregion)):
            vtk.write(f"SCALARS {name} int 1\n")
            vtk.write("LOOKUP_TABLE default\n")
            vtk.write("\n".join(str(int(v)) for v in field) + "\n")

        nodes = io.StringIO()
        nodes.write(",".join(MESH_NODE_COLUMNS) + "\n")
        for i, (px, py) in enumerate(mesh.nodes):
            nodes.write(f"{i},{_fmt(px)},{_fmt(py)}\n")

        triangles = io.StringIO()
        triangles.write(",".join(MESH_TRIANGLE_COLUMNS) + "\n")
        for t, tri in enumerate(mesh.triangles):
            i, j = mesh.cell_index[t]
            triangles.write(",".join([
                str(t), str(tri[0]), str(tri[1]), str(tri[2]), str(i), str(j),
                str(int(mesh.upper[t])), _fmt(mesh.hx[t]), _fmt(mesh.hy[t]),
                REGIONS_BY_CODE[int(mesh.region[t])].value, str(int(mesh.subregion[t])),
            ]) + "\n")

        paths = {
            "vtk": write_atomic(f"{prefix}_mesh.vtk", vtk.getvalue()),
            "nodes": write_atomic(f"{prefix}_nodes.csv", nodes.getvalue()),
            "triangles": write_atomic(f"{prefix}_triangles.csv", triangles.getvalue()),
        }
        for kind, path in paths.items():
            SolverLogger.log_export(path, f"mesh-{kind}", correlation_id=correlation_id)
        return paths

    @staticmethod
    def dump_matrix(A: sp.spmatrix, path: str, comment: str = "", correlation_id: Optional[str] = None) -> str:
        """MatrixMarket coordinate file of a sparse matrix."""
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".mtx")
        os.close(fd)
        try:
            scipy.io.mmwrite(tmp, sp.coo_matrix(A), comment=comment, precision=17)
            os.replace(tmp, path)
        except Exception:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise
        SolverLogger.log_export(path, "matrix-market", correlation_id=correlation_id)
        return path
