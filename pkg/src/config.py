"""
Process settings and logging setup

Settings are read from the environment (prefix DUALFLOW_) through pydantic-settings.
The calibrated audit constants live here so that every audit reports against the same
frozen values.
"""

import logging
import sys
from functools import lru_cache

import structlog
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="DUALFLOW_", env_file=".env", extra="ignore")

    log_level: str = "INFO"
    log_json: bool = False
    runs_dir: str = "runs"

    # size caps
    d1_atom_cap: int = Field(2000, gt=0)
    particle_budget: int = Field(20000, gt=0, description="max atoms over all species in a particle run")

    # schemes
    cfl: float = Field(0.9, gt=0.0, le=1.0)
    max_steps: int = Field(2_000_000, gt=0)

    # audit lattice for Lip0 and the Lipschitz audit
    lattice_inflation: float = 0.25
    lattice_refinement: int = 4

    # calibrated audit constants (per dimension: index 0 is d=1)
    gradient_constant: tuple[float, float] = (1.0, 2.0)
    weighted_constant: float = 1.4142135623730951  # sup of (1+|x|)/eta and its inverse
    time_constant: tuple[float, float] = (1.5, 2.0)
    l2_gradient_constant: tuple[float, float] = (1.5, 2.5)
    audit_slack: float = 0.05

    # certificate tolerance: base + lip * (1 + T) * (dx_factor*dx + ds_factor*ds + dt_factor*dt)
    cert_base: float = 1e-10
    cert_dx_factor: float = 0.5
    cert_ds_factor: float = 0.5
    cert_dt_factor: float = 0.5

    # Picard
    picard_tol: float = 1e-8
    picard_max_iter: int = 60
    picard_ratio_threshold: float = 0.8
    picard_min_window: float = 1e-3
    ball_factor: float = 4.0

    def dimensional(self, values: tuple[float, float], dim: int) -> float:
        """Pick the calibrated constant for a 1D or 2D problem"""
        return values[min(dim, len(values)) - 1]


@lru_cache
def get_settings() -> Settings:
    return Settings()


class StderrLogger:
    """Print logger bound to whatever sys.stderr is at write time"""

    def msg(self, message: str) -> None:
        print(message, file=sys.stderr, flush=True)

    log = debug = info = warning = warn = error = critical = exception = fatal = msg


def stderr_logger_factory(*args) -> StderrLogger:
    return StderrLogger()


def configure_logging(level: str | None = None, json_output: bool | None = None) -> None:
    """
    Configure structlog for the CLI and the API

    Args:
        level: log level name, defaults to settings
        json_output: one JSON object per line instead of the console renderer
    """
    settings = get_settings()
    level_name = (level or settings.log_level).upper()
    as_json = settings.log_json if json_output is None else json_output

    renderer = structlog.processors.JSONRenderer() if as_json else structlog.dev.ConsoleRenderer()
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(getattr(logging, level_name, logging.INFO)),
        logger_factory=stderr_logger_factory,
        cache_logger_on_first_use=False,
    )
