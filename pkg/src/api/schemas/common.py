"""
Shared request/response models
"""

import math
from typing import Any, Optional

import numpy as np
from fastapi import HTTPException
from pydantic import BaseModel, Field

from src.core.errors import DualflowError
from src.core.measures import GridDensity, GridSpec, Measure, ParticleMeasure


class MeasureInput(BaseModel):
    """
    A measure posted as JSON

    Particle form: `weights` and `positions` (one list of coordinates per atom).
    Grid form: `lower`, `upper`, `cells` and row-major cell `values`.
    """
    kind: str = Field("particle", pattern="^(particle|grid)$")
    weights: list[float] = Field(default_factory=list)
    positions: list[list[float]] = Field(default_factory=list)
    lower: list[float] = Field(default_factory=list)
    upper: list[float] = Field(default_factory=list)
    cells: list[int] = Field(default_factory=list)
    values: list[float] = Field(default_factory=list)
    outflux: float = 0.0

    def to_measure(self) -> Measure:
        if self.kind == "particle":
            return ParticleMeasure(np.asarray(self.weights), np.asarray(self.positions, dtype=float))
        grid = GridSpec(tuple(self.lower), tuple(self.upper), tuple(self.cells))
        return GridDensity(grid, np.asarray(self.values, dtype=float).reshape(grid.shape), self.outflux)


class MetricResponse(BaseModel):
    d1: float
    d2: Optional[float] = None
    hminus1: Optional[float] = None
    first_moments: tuple[float, float]
    embedding_holds: Optional[bool] = None


def finite_json(value: Any) -> Any:
    """Plain JSON types; non-finite floats become None"""
    if isinstance(value, dict):
        return {str(k): finite_json(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [finite_json(v) for v in value]
    if isinstance(value, np.ndarray):
        return finite_json(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value) if math.isfinite(value) else None
    return value


def http_error(e: Exception) -> HTTPException:
    """Validation errors are 400, other solver errors 422, anything else 500"""
    if isinstance(e, DualflowError) and isinstance(e, ValueError):
        return HTTPException(status_code=400, detail=str(e))
    if isinstance(e, DualflowError):
        return HTTPException(status_code=422, detail=str(e))
    return HTTPException(status_code=500, detail=str(e))
