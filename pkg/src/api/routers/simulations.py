"""
Simulations API Router

Run a posted configuration, then list, inspect or delete stored runs
"""

from typing import List

from fastapi import APIRouter, HTTPException
from pydantic import BaseModel

from src.api.schemas.common import finite_json, http_error
from src.calculations.runs import simulate
from src.config import get_settings
from src.core.run_manager import RunManager
from src.data.run_config import RunConfig

router = APIRouter(prefix="/simulations", tags=["Simulations"])


class RunInfo(BaseModel):
    name: str
    created_at: str = ""
    updated_at: str = ""
    status: str = ""
    representation: str = ""
    config_hash: str = ""
    path: str = ""


def _manager() -> RunManager:
    return RunManager(get_settings().runs_dir)


@router.post("/run")
def run_simulation(config: RunConfig):
    """Solve, store and certify; returns the run summary"""
    try:
        outcome = simulate(config, runs_base=get_settings().runs_dir)
        return finite_json(outcome.summary())
    except Exception as e:
        raise http_error(e)


@router.get("/list", response_model=List[RunInfo])
def list_runs():
    return _manager().list_runs()


@router.get("/{run_name}")
def get_run(run_name: str):
    run = _manager().get_run(run_name)
    if run is None:
        raise HTTPException(status_code=404, detail=f"Run '{run_name}' not found")
    return finite_json(run)


@router.delete("/{run_name}")
def delete_run(run_name: str):
    if not _manager().delete_run(run_name):
        raise HTTPException(status_code=404, detail=f"Run '{run_name}' not found")
    return {"success": True, "message": f"Run '{run_name}' deleted"}
