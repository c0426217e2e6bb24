"""
Metrics API Router

Distances between two posted measures
"""

from fastapi import APIRouter
from pydantic import BaseModel

from src.api.schemas.common import MeasureInput, MetricResponse, http_error
from src.calculations.metrics import metric_report

router = APIRouter(prefix="/metrics", tags=["Metrics"])


class DistanceRequest(BaseModel):
    mu: MeasureInput
    nu: MeasureInput


@router.post("/distance", response_model=MetricResponse)
async def distance(request: DistanceRequest):
    """d1, d2 (1D), H^-1 (same grid) and first moments"""
    try:
        report = metric_report(request.mu.to_measure(), request.nu.to_measure())
        return MetricResponse(**report.to_dict())
    except Exception as e:
        raise http_error(e)
