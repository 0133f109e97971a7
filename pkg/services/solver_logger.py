import logging
import uuid
from datetime import datetime, timezone
from typing import Optional, Dict, Any
from enum import Enum
import json

from config import config


class SolverEventType(Enum):
    MESH_BUILT = "mesh_built"
    ASSEMBLY_FINISHED = "assembly_finished"
    CONDITIONING_WARNING = "conditioning_warning"
    SOLVE_FINISHED = "solve_finished"
    SOLVER_FAILURE = "solver_failure"
    RESIDUAL_ABOVE_TOLERANCE = "residual_above_tolerance"
    CELL_FINISHED = "sweep_cell_finished"
    CELL_FAILED = "sweep_cell_failed"
    SWEEP_FINISHED = "sweep_finished"
    EXPORT_WRITTEN = "export_written"


logging.basicConfig(
    level=getattr(logging, config.WG_LOG_LEVEL.upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)

logger = logging.getLogger("wg.solver")


class SolverLogger:

    @staticmethod
    def generate_correlation_id() -> str:
        return str(uuid.uuid4())

    @staticmethod
    def sanitize_for_logging(data: Any) -> Any:
        """Make numpy scalars, arrays and tuples JSON friendly."""
        if isinstance(data, dict):
            return {str(key): SolverLogger.sanitize_for_logging(value) for key, value in data.items()}
        if isinstance(data, (list, tuple)):
            return [SolverLogger.sanitize_for_logging(item) for item in data]
        if hasattr(data, "tolist"):
            return SolverLogger.sanitize_for_logging(data.tolist())
        if isinstance(data, float) and data != data:
            return "nan"
        if isinstance(data, str) and len(data) > 1000:
            return data[:1000] + "...[truncated]"
        return data

    @staticmethod
    def log_event(
        event_type: SolverEventType,
        details: Optional[Dict[str, Any]] = None,
        correlation_id: Optional[str] = None,
        severity: str = "INFO"
    ) -> str:
        if not correlation_id:
            correlation_id = SolverLogger.generate_correlation_id()

        log_entry = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "correlation_id": correlation_id,
            "event_type": event_type.value,
            "details": SolverLogger.sanitize_for_logging(details) if details else {},
            "severity": severity
        }

        log_message = json.dumps(log_entry, ensure_ascii=False)

        if severity == "ERROR":
            logger.error(log_message)
        elif severity == "WARNING":
            logger.warning(log_message)
        elif severity == "DEBUG":
            logger.debug(log_message)
        else:
            logger.info(log_message)

        return correlation_id

    @staticmethod
    def log_mesh_built(summary: Dict[str, Any], correlation_id: Optional[str] = None) -> str:
        return SolverLogger.log_event(
            SolverEventType.MESH_BUILT, details=summary, correlation_id=correlation_id, severity="DEBUG"
        )

    @staticmethod
    def log_assembly(
        n_dofs: int,
        n_free: int,
        nnz: int,
        seconds: float,
        correlation_id: Optional[str] = None
    ) -> str:
        details = {
            "dofs": n_dofs,
            "free_dofs": n_free,
            "nnz": nnz,
            "seconds": round(seconds, 4)
        }
        return SolverLogger.log_event(
            SolverEventType.ASSEMBLY_FINISHED, details=details, correlation_id=correlation_id
        )

    @staticmethod
    def log_conditioning(
        max_sigma_h: float,
        threshold: float,
        epsilon: float,
        n: int,
        correlation_id: Optional[str] = None
    ) -> str:
        details = {
            "max_sigma_h": max_sigma_h,
            "threshold": threshold,
            "epsilon": epsilon,
            "N": n
        }
        return SolverLogger.log_event(
            SolverEventType.CONDITIONING_WARNING, details=details,
            correlation_id=correlation_id, severity="WARNING"
        )

    @staticmethod
    def log_solve(report: Dict[str, Any], correlation_id: Optional[str] = None) -> str:
        severity = "INFO" if report.get("converged", True) else "WARNING"
        event = SolverEventType.SOLVE_FINISHED if severity == "INFO" else SolverEventType.RESIDUAL_ABOVE_TOLERANCE
        return SolverLogger.log_event(event, details=report, correlation_id=correlation_id, severity=severity)

    @staticmethod
    def log_solver_failure(
        message: str,
        diagnostics: Optional[Dict[str, Any]] = None,
        correlation_id: Optional[str] = None
    ) -> str:
        details = {
            "error": message[:500],
            "diagnostics": diagnostics or {}
        }
        return SolverLogger.log_event(
            SolverEventType.SOLVER_FAILURE, details=details, correlation_id=correlation_id, severity="ERROR"
        )

    @staticmethod
    def log_cell(
        cell: Dict[str, Any],
        correlation_id: Optional[str] = None
    ) -> str:
        return SolverLogger.log_event(SolverEventType.CELL_FINISHED, details=cell, correlation_id=correlation_id)

    @staticmethod
    def log_cell_failure(
        cell: Dict[str, Any],
        error: str,
        correlation_id: Optional[str] = None
    ) -> str:
        details = dict(cell)
        details["error"] = error[:500]
        return SolverLogger.log_event(
            SolverEventType.CELL_FAILED, details=details, correlation_id=correlation_id, severity="ERROR"
        )

    @staticmethod
    def log_sweep(
        problem: str,
        k: int,
        cells: int,
        failures: int,
        correlation_id: Optional[str] = None
    ) -> str:
        details = {
            "problem": problem,
            "k": k,
            "cells": cells,
            "failures": failures
        }
        severity = "WARNING" if failures else "INFO"
        return SolverLogger.log_event(
            SolverEventType.SWEEP_FINISHED, details=details, correlation_id=correlation_id, severity=severity
        )

    @staticmethod
    def log_export(path: str, kind: str, correlation_id: Optional[str] = None) -> str:
        return SolverLogger.log_event(
            SolverEventType.EXPORT_WRITTEN, details={"path": path, "kind": kind}, correlation_id=correlation_id
        )
