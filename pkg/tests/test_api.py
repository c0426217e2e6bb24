import pytest
from fastapi.testclient import TestClient

from src.api.main import app


@pytest.fixture
def client():
    return TestClient(app)


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json()["service"] == "dualflow"


def test_distance_between_diracs(client):
    payload = {"mu": {"weights": [1.0], "positions": [[0.0]]}, "nu": {"weights": [1.0], "positions": [[1.0]]}}
    response = client.post("/metrics/distance", json=payload)
    assert response.status_code == 200
    body = response.json()
    assert body["d1"] == pytest.approx(1.0)
    assert body["hminus1"] is None


def test_distance_on_a_grid(client):
    grid = {"kind": "grid", "lower": [0.0], "upper": [1.0], "cells": [4]}
    payload = {"mu": dict(grid, values=[4.0, 0.0, 0.0, 0.0]), "nu": dict(grid, values=[0.0, 0.0, 0.0, 4.0])}
    body = client.post("/metrics/distance", json=payload).json()
    assert body["d1"] == pytest.approx(0.75)
    assert body["hminus1"] > 0


def test_unnormalized_weights_are_rejected(client):
    payload = {"mu": {"weights": [0.5], "positions": [[0.0]]}, "nu": {"weights": [1.0], "positions": [[1.0]]}}
    assert client.post("/metrics/distance", json=payload).status_code == 400


def test_scenario_listing(client):
    names = [s["name"] for s in client.get("/scenarios/").json()]
    assert "constant_field_duality" in names


def test_unknown_scenario(client):
    assert client.post("/scenarios/nope", json={}).status_code == 400


def test_simulation_lifecycle(client, heat_run):
    response = client.post("/simulations/run", json=heat_run)
    assert response.status_code == 200
    assert response.json()["certificate"]["passed"]

    runs = client.get("/simulations/list").json()
    assert [r["name"] for r in runs] == ["heat"]
    assert client.get("/simulations/heat").json()["status"] == "certified"

    assert client.delete("/simulations/heat").status_code == 200
    assert client.get("/simulations/heat").status_code == 404
    assert client.delete("/simulations/heat").status_code == 404


def test_invalid_run_config(client, heat_run):
    heat_run["solver"].pop("horizon")
    assert client.post("/simulations/run", json=heat_run).status_code == 422


def test_dual_solve(client, heat_run):
    assert client.post("/dual/solve", json=heat_run).status_code == 400
    heat_run["dual"] = {"field": "linear", "value": -1.0, "psi0": "x1"}
    body = client.post("/dual/solve", json=heat_run).json()
    assert body["passed"]
    assert body["path"] is None
    assert body["snapshots"] == [0.0, 0.2]
