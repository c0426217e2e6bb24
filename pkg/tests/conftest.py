"""Shared fixtures"""

import copy

import pytest

from src.config import get_settings
from src.core.measures import GridSpec, ParticleMeasure

HEAT_RUN = {
    "name": "heat",
    "dimension": 1,
    "species": [
        {"name": "rho", "diffusion": 0.05, "initial": {"kind": "gaussian", "center": [0.0], "sigma": 0.5}},
    ],
    "solver": {
        "representation": "grid",
        "horizon": 0.2,
        "grid": {"lower": [-4.0], "upper": [4.0], "cells": [64]},
    },
    "probes": {"bank": "default", "count": 4},
}


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch, tmp_path):
    """Settings are cached per process; every test gets its own runs directory"""
    monkeypatch.setenv("DUALFLOW_RUNS_DIR", str(tmp_path / "api-runs"))
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def line_grid() -> GridSpec:
    return GridSpec.interval(-4.0, 4.0, 200)


@pytest.fixture
def symmetric_pair() -> ParticleMeasure:
    return ParticleMeasure.from_atoms([(0.5, -1.0), (0.5, 1.0)])


@pytest.fixture
def heat_run() -> dict:
    return copy.deepcopy(HEAT_RUN)
