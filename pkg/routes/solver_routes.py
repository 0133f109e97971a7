"""
Solver routes: model problems, single solves and small sweeps over HTTP
"""
import asyncio
import logging
from typing import List, Optional

from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field, ValidationError

from config import config
from services.errors import WGError
from services.problem_service import PROBLEM_INFO
from services.solver_logger import SolverLogger
from services.sweep_service import RunConfig, SweepService

logger = logging.getLogger(__name__)

router = APIRouter()


class SolveRequest(BaseModel):
    problem: str = "example1"
    k: int = 2
    N: int = 8
    eps2: float = 1e-6
    lam: Optional[float] = Field(default=None, alias="lambda")
    solver: Optional[str] = None
    tol: Optional[float] = None


class SweepRequest(BaseModel):
    problem: str = "example1"
    k: int = 2
    N: List[int] = [4, 8]
    eps2: List[float] = [1e-6]
    lam: Optional[float] = Field(default=None, alias="lambda")
    solver: Optional[str] = None
    tol: Optional[float] = None
    formats: List[str] = []


def _run_config(request: BaseModel, **overrides) -> RunConfig:
    data = request.model_dump(by_alias=True, exclude_none=True)
    data.update(overrides)
    return RunConfig(**data)


@router.get("/problems")
async def list_problems():
    """Registered model problems and the discretization defaults."""
    return {
        "success": True,
        "problems": [{"name": name, **info} for name, info in PROBLEM_INFO.items()],
        "degrees": list(config.SUPPORTED_DEGREES),
        "solvers": list(config.SUPPORTED_SOLVERS),
    }


@router.post("/solve")
async def solve(request: SolveRequest):
    """Solve one (problem, k, N, eps^2) cell and return both error norms."""
    correlation_id = SolverLogger.generate_correlation_id()
    try:
        run = _run_config(request, N=[request.N], eps2=[request.eps2], formats=[])
        row = await asyncio.to_thread(SweepService.solve_cell, run, request.eps2, request.N, correlation_id)
        return {"success": True, "correlation_id": correlation_id, "result": row}
    except ValidationError as e:
        raise HTTPException(status_code=400, detail=e.errors(include_url=False, include_context=False))
    except WGError as e:
        raise HTTPException(status_code=400, detail=e.to_dict())
    except Exception as e:
        logger.error(f"❌ Error solving {request.problem}: {e}")
        raise HTTPException(status_code=500, detail="Solve failed")


@router.post("/sweep")
async def sweep(request: SweepRequest):
    """Run a small convergence sweep and return the JSON report."""
    try:
        run = _run_config(request)
        report = await SweepService.run_sweep_async(run)
        return {"success": report.ok, "report": report.to_dict(), "paths": report.paths}
    except ValidationError as e:
        raise HTTPException(status_code=400, detail=e.errors(include_url=False, include_context=False))
    except WGError as e:
        raise HTTPException(status_code=400, detail=e.to_dict())
    except Exception as e:
        logger.error(f"❌ Error running sweep for {request.problem}: {e}")
        raise HTTPException(status_code=500, detail="Sweep failed")
