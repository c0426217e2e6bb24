"""
Dual API Router

Frozen-field dual solves with the estimate audits
"""

from fastapi import APIRouter

from src.api.schemas.common import finite_json, http_error
from src.calculations.runs import dual
from src.core.errors import ConfigError
from src.data.run_config import RunConfig

router = APIRouter(prefix="/dual", tags=["Dual Solver"])


@router.post("/solve")
def solve(config: RunConfig):
    """Solve the config's dual block without storing it"""
    try:
        if config.dual is None:
            raise ConfigError("Run config has no dual block")
        outcome = dual(config, store=False)
        return finite_json(outcome.summary())
    except Exception as e:
        raise http_error(e)
