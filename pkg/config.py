import os
import logging
from typing import List, Optional
from dotenv import load_dotenv

load_dotenv()

logger = logging.getLogger(__name__)


def _optional_int(name: str) -> Optional[int]:
    value = os.getenv(name, "").strip()
    return int(value) if value else None


def _optional_float(name: str) -> Optional[float]:
    value = os.getenv(name, "").strip()
    return float(value) if value else None


def _csv_list(name: str, default: str, cast) -> List:
    raw = os.getenv(name, default)
    return [cast(item) for item in raw.split(",") if item.strip()]


class Config:
    # ========================================================================
    # Discretization
    # ========================================================================

    # Polynomial degree k of the interior unknown u0 (traces use k, fluxes k-1)
    WG_DEGREE = int(os.getenv("WG_DEGREE", "2"))

    # Shishkin grading constant; unset means lambda = k + 1
    WG_LAMBDA = _optional_float("WG_LAMBDA")

    # Weak gradient target degree is l = k + offset (offset -1 or 0)
    WG_GRADIENT_DEGREE_OFFSET = int(os.getenv("WG_GRADIENT_DEGREE_OFFSET", "-1"))

    # ========================================================================
    # Quadrature
    # ========================================================================

    # Triangle rule exactness; unset means 2k + 4
    WG_QUAD_TRI_DEGREE = _optional_int("WG_QUAD_TRI_DEGREE")

    # Gauss points per edge; unset means k + 2
    WG_QUAD_EDGE_POINTS = _optional_int("WG_QUAD_EDGE_POINTS")

    # ========================================================================
    # Linear solver
    # ========================================================================

    WG_SOLVER_METHOD = os.getenv("WG_SOLVER_METHOD", "direct")
    WG_SOLVER_TOL = float(os.getenv("WG_SOLVER_TOL", "1e-10"))
    WG_REFINEMENT_STEPS = int(os.getenv("WG_REFINEMENT_STEPS", "3"))

    # sigma_T * h above this value triggers a conditioning event
    WG_CONDITIONING_WARN = float(os.getenv("WG_CONDITIONING_WARN", "1e12"))

    # ========================================================================
    # Harness
    # ========================================================================

    WG_OUTPUT_DIR = os.getenv("WG_OUTPUT_DIR", "results")
    WG_PLOT_GRID_POINTS = int(os.getenv("WG_PLOT_GRID_POINTS", "101"))
    WG_MAX_CONCURRENT_CELLS = int(os.getenv("WG_MAX_CONCURRENT_CELLS", "2"))
    WG_ASSEMBLY_WORKERS = int(os.getenv("WG_ASSEMBLY_WORKERS", "1"))
    WG_DEFAULT_N = _csv_list("WG_DEFAULT_N", "4,8,16,32,64", int)
    WG_DEFAULT_EPS2 = _csv_list("WG_DEFAULT_EPS2", "1e-6,1e-10", float)

    WG_LOG_LEVEL = os.getenv("WG_LOG_LEVEL", "INFO")

    SUPPORTED_DEGREES = (2, 3)
    SUPPORTED_SOLVERS = ("direct", "cg")
    SUPPORTED_FORMATS = ("csv", "json", "vtk", "table")

    @classmethod
    def lambda_for(cls, k: int) -> float:
        """Grading constant used for degree k (lambda >= s with s = k + 1)."""
        return cls.WG_LAMBDA if cls.WG_LAMBDA is not None else float(k + 1)

    @classmethod
    def tri_quad_degree_for(cls, k: int) -> int:
        return cls.WG_QUAD_TRI_DEGREE if cls.WG_QUAD_TRI_DEGREE is not None else 2 * k + 4

    @classmethod
    def edge_quad_points_for(cls, k: int) -> int:
        return cls.WG_QUAD_EDGE_POINTS if cls.WG_QUAD_EDGE_POINTS is not None else k + 2

    @classmethod
    def check_settings(cls) -> dict:
        """
        Check every tunable for a usable value.
        Returns dict with status and the list of offending settings.
        """
        invalid = []

        if cls.WG_DEGREE not in cls.SUPPORTED_DEGREES:
            invalid.append("WG_DEGREE")
        if cls.WG_LAMBDA is not None and cls.WG_LAMBDA <= 0:
            invalid.append("WG_LAMBDA")
        if cls.WG_GRADIENT_DEGREE_OFFSET not in (-1, 0):
            invalid.append("WG_GRADIENT_DEGREE_OFFSET")
        if cls.WG_QUAD_TRI_DEGREE is not None and cls.WG_QUAD_TRI_DEGREE < 1:
            invalid.append("WG_QUAD_TRI_DEGREE")
        if cls.WG_QUAD_EDGE_POINTS is not None and cls.WG_QUAD_EDGE_POINTS < 1:
            invalid.append("WG_QUAD_EDGE_POINTS")
        if cls.WG_SOLVER_METHOD not in cls.SUPPORTED_SOLVERS:
            invalid.append("WG_SOLVER_METHOD")
        if not 0 < cls.WG_SOLVER_TOL < 1:
            invalid.append("WG_SOLVER_TOL")
        if cls.WG_MAX_CONCURRENT_CELLS < 1:
            invalid.append("WG_MAX_CONCURRENT_CELLS")
        if cls.WG_ASSEMBLY_WORKERS < 1:
            invalid.append("WG_ASSEMBLY_WORKERS")
        if any(n < 4 or n % 4 for n in cls.WG_DEFAULT_N):
            invalid.append("WG_DEFAULT_N")
        if any(e <= 0 for e in cls.WG_DEFAULT_EPS2):
            invalid.append("WG_DEFAULT_EPS2")

        return {
            "all_ok": len(invalid) == 0,
            "invalid": invalid,
        }

    @classmethod
    def validate(cls) -> bool:
        """Validate and log the status of all settings."""
        status = cls.check_settings()

        if status["invalid"]:
            logger.warning(f"⚠️  Invalid settings ignored or rejected: {', '.join(status['invalid'])}")
        else:
            logger.info("✅ All solver settings are valid")

        return status["all_ok"]

config = Config()
