import numpy as np
import pytest

from src.calculations.scenarios import (
    SCENARIOS,
    _parse_value,
    list_scenarios,
    run_constant_field_duality,
    run_gradient_flow_comparison,
    run_heat_baseline,
    run_newtonian_diagram,
    run_picard_contraction,
    run_scenario,
    run_two_species,
    two_species_means,
)
from src.calculations.velocity import Potential
from src.core.errors import ScenarioError


def test_registry_listing():
    names = [entry["name"] for entry in list_scenarios()]
    assert names == list(SCENARIOS)
    assert {"newtonian_diagram", "gradient_flow", "two_species", "heat_baseline",
            "constant_field_duality", "picard_contraction"} == set(names)


def test_unknown_scenario():
    with pytest.raises(ScenarioError):
        run_scenario("nope")


def test_unknown_parameter():
    with pytest.raises(ScenarioError):
        run_scenario("heat_baseline", {"bogus": "1"})


@pytest.mark.parametrize("raw, parsed", [
    ("4", 4),
    ("1e3", 1000.0),
    ("0.5", 0.5),
    ("1;2;4", (1, 2, 4)),
    ("closed", "closed"),
    (3, 3),
])
def test_parse_value(raw, parsed):
    assert _parse_value(raw) == parsed


def test_newtonian_diagram_needs_late_enough_time():
    with pytest.raises(ScenarioError):
        run_scenario("newtonian_diagram", {"t": "0.1"})


def test_newtonian_diagram_needs_two_m_values():
    with pytest.raises(ScenarioError):
        run_scenario("newtonian_diagram", {"m": "8"})


def test_gradient_flow_rejects_non_convex_potential():
    with pytest.raises(ScenarioError):
        run_gradient_flow_comparison(Potential("gaussian"))


def test_two_species_means_conserve_total():
    means = two_species_means(0.5, [-1.0, 2.0], 0.7)
    assert means.sum() == pytest.approx(1.0)
    assert two_species_means(0.5, [-1.0, 2.0], 50.0) == pytest.approx(np.array([0.5, 0.5]))


@pytest.mark.slow
def test_gradient_flow_matches_closed_form():
    result = run_gradient_flow_comparison()
    assert result.summary["reference"] == "closed_form"
    assert result.summary["sup_d2"] <= 1e-6
    assert result.summary["support_in_hull"]
    assert result.summary["gradient_decay"]


@pytest.mark.slow
def test_heat_baseline_passes():
    result = run_heat_baseline()
    assert result.passed
    assert result.summary["d1_final"] <= 2e-3
    assert result.to_dict()["certificate"]["passed"]


@pytest.mark.slow
def test_constant_field_duality_residual_halves():
    result = run_constant_field_duality()
    assert result.passed
    assert result.summary["max_residual"] <= 5e-3
    assert 1.4 <= result.summary["residual_ratio"] <= 2.6
    assert 0.5 < result.summary["translation_order"] < 1.5


@pytest.mark.slow
def test_picard_contraction_on_gaussian_kernel():
    result = run_picard_contraction()
    assert result.passed
    assert result.summary["ratio"] < 0.8
    assert 1.5 <= result.summary["reduction"] <= 2.6
    assert result.summary["picard_iterations"] >= 1


@pytest.mark.slow
def test_newtonian_diagram_corners():
    result = run_newtonian_diagram()
    assert result.passed
    assert result.summary["corner_a_stationary"]
    assert 0.45 <= result.summary["corner_gap"] <= 0.55
    limits = result.tables["limits"]
    assert set(limits["k"]) == {1e2, 1e3, 1e4}
    assert len(result.tables["dual"]) == 3


@pytest.mark.slow
def test_two_species_matches_closed_form():
    result = run_two_species()
    assert result.passed
    assert result.summary["max_position_error"] <= 1e-5
    assert result.summary["certificate_passed"]
