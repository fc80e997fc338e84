"""
Main FastAPI application.
"""
import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from pmdlab.api.environments import router as environments_router
from pmdlab.api.runs import router as runs_router
from pmdlab.config import configure_logging, settings
from pmdlab.mdp.gridworld import HELD_OUT_NAMES

logger = logging.getLogger(__name__)

VERSION = "1.0.0"


@asynccontextmanager
async def lifespan(app: FastAPI):
    configure_logging(settings.log_level)
    logger.info("pmdlab service v%s, %d held-out grids in %s", VERSION, len(HELD_OUT_NAMES), settings.gridworld_dir)
    yield


app = FastAPI(
    title="pmdlab",
    description="Tabular policy mirror descent with learned mirror maps",
    version=VERSION,
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.get("/")
async def root():
    """Root endpoint."""
    return {
        "message": "pmdlab API",
        "version": VERSION,
        "endpoints": {
            "environments": "/api/environments",
            "runs": "/api/runs/{pmd,ampo}",
            "check_bounds": "/api/check-bounds",
            "docs": "/docs",
            "health": "/health",
        },
    }


@app.get("/health")
async def health():
    """Health check endpoint."""
    missing = [name for name in HELD_OUT_NAMES if not (settings.gridworld_dir / f"{name}.txt").exists()]
    return {
        "status": "healthy" if not missing else "degraded",
        "service": "pmdlab",
        "missing_grids": missing,
    }


app.include_router(environments_router, prefix="/api", tags=["environments"])
app.include_router(runs_router, prefix="/api", tags=["runs"])


if __name__ == "__main__":
    import uvicorn

    uvicorn.run("pmdlab.main:app", host="0.0.0.0", port=settings.api_port, reload=True)
