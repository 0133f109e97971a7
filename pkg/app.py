import logging
from contextlib import asynccontextmanager
from datetime import datetime, timezone

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from config import config
from routes import solver_routes

logger = logging.getLogger(__name__)

APP_VERSION = "1.0.0"


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Lifespan event for startup and shutdown tasks."""
    logger.info("🚀 Weak Galerkin solver API - starting up")
    config.validate()
    yield
    logger.info("👋 Weak Galerkin solver API - shutting down")


app = FastAPI(title="Weak Galerkin Shishkin Solver", version=APP_VERSION, lifespan=lifespan)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["GET", "POST", "OPTIONS"],
    allow_headers=["Content-Type"],
)

app.include_router(solver_routes.router, prefix="/api", tags=["solver"])


@app.get("/health")
async def health_check():
    """Service status and the validity of the solver settings."""
    settings = config.check_settings()
    return {
        "service": "wg-shishkin",
        "version": APP_VERSION,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "status": "healthy" if settings["all_ok"] else "degraded",
        "config_ok": settings["all_ok"],
        "invalid_settings": settings["invalid"],
        "defaults": {
            "k": config.WG_DEGREE,
            "solver": config.WG_SOLVER_METHOD,
            "tol": config.WG_SOLVER_TOL,
        },
    }


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=5000)
