"""
Scenarios API Router
"""

from typing import Any

from fastapi import APIRouter
from pydantic import BaseModel, Field

from src.api.schemas.common import finite_json, http_error
from src.calculations.scenarios import list_scenarios, run_scenario

router = APIRouter(prefix="/scenarios", tags=["Scenarios"])


class ScenarioRequest(BaseModel):
    params: dict[str, Any] = Field(default_factory=dict)


@router.get("/")
def scenarios():
    return finite_json(list_scenarios())


@router.post("/{name}")
def run(name: str, request: ScenarioRequest):
    """Run a preset; list values may be posted as JSON lists or 'a;b;c' strings"""
    try:
        params = {key: tuple(value) if isinstance(value, list) else value for key, value in request.params.items()}
        return finite_json(run_scenario(name, params).to_dict())
    except Exception as e:
        raise http_error(e)
