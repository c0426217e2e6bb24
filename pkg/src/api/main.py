"""
dualflow API - Main Entry Point

Endpoints:
- Metrics (d1, d2, H^-1 between posted measures)
- Simulations (run, store and certify a run config)
- Dual solver (frozen-field dual solves with audits)
- Scenarios (registered presets)
"""

from contextlib import asynccontextmanager

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from src.api.routers import dual, metrics, scenarios, simulations
from src.config import configure_logging

VERSION = "0.1.0"


@asynccontextmanager
async def lifespan(app: FastAPI):
    configure_logging()
    yield


app = FastAPI(
    title="dualflow API",
    description="Aggregation-diffusion simulation with dual certificates",
    version=VERSION,
    lifespan=lifespan,
)

# CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(metrics.router)
app.include_router(simulations.router)
app.include_router(dual.router)
app.include_router(scenarios.router)


@app.get("/health")
def health_check():
    """Health check"""
    return {"status": "healthy", "service": "dualflow", "version": VERSION}


@app.get("/")
def root():
    return {
        "service": "dualflow API",
        "version": VERSION,
        "docs": "/docs",
        "endpoints": {
            "metrics": "/metrics",
            "simulations": "/simulations",
            "dual": "/dual",
            "scenarios": "/scenarios",
        },
    }
