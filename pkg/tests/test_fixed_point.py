import numpy as np
import pytest

from src.calculations.fixed_point import (
    certificate_tolerance,
    certify_entropy_pair,
    continuous_dependence_check,
    contraction_ratio,
    dual_grid_for,
    metric_name,
    picard_solve,
    semigroup_check,
    trajectory_distance,
)
from src.calculations.primal_solver import PrimalConfig, frozen_field_flow, heat_kernel_density, solve_particles
from src.calculations.probes import coordinate
from src.calculations.velocity import InteractionKernel, Potential, VelocityField
from src.core.errors import BallEscapeError, ConfigError, NonContractionError
from src.core.measures import GridSpec, ParticleMeasure

QUADRATIC = InteractionKernel.single(Potential("quadratic"))


class TestPicard:
    def test_quadratic_fixed_point(self, symmetric_pair):
        trajectory, state = picard_solve(PrimalConfig(horizon=1.0), QUADRATIC, [symmetric_pair])
        positions = np.sort(trajectory.final[0].positions[:, 0])
        np.testing.assert_allclose(positions, [-np.exp(-1.0), np.exp(-1.0)], atol=1e-8)
        assert state.converged
        assert state.metric == "d1_1d"
        assert state.distances[-1] < 1e-8
        assert len(state.to_frame()) == state.iteration

    def test_zero_kernel_needs_one_iterate(self, symmetric_pair):
        trajectory, state = picard_solve(PrimalConfig(horizon=1.0), InteractionKernel.zero(), [symmetric_pair])
        assert state.iteration == 1
        np.testing.assert_array_equal(trajectory.final[0].positions, symmetric_pair.positions)

    def test_iterate_cap(self, symmetric_pair):
        with pytest.raises(NonContractionError) as info:
            picard_solve(PrimalConfig(horizon=1.0), QUADRATIC, [symmetric_pair], max_iter=1)
        assert len(info.value.distances) == 1

    def test_ball_escape(self, symmetric_pair):
        with pytest.raises(BallEscapeError):
            picard_solve(PrimalConfig(horizon=1.0), QUADRATIC, [symmetric_pair], ball_radius=0.1)

    def test_contraction_ratio(self):
        mu0 = ParticleMeasure.from_atoms([(0.25, -1.0), (0.75, 1.0)])
        assert contraction_ratio(PrimalConfig(horizon=1.0), QUADRATIC, [mu0], 1.0) < 1.0


def test_trajectory_distance_needs_shared_times(symmetric_pair):
    a = solve_particles(PrimalConfig(horizon=1.0), QUADRATIC, [symmetric_pair])
    b = solve_particles(PrimalConfig(horizon=1.0, outputs=(0.5,)), QUADRATIC, [symmetric_pair])
    assert trajectory_distance(a, a) == 0.0
    with pytest.raises(ConfigError):
        trajectory_distance(a, b)


def test_metric_name(symmetric_pair):
    plane = solve_particles(PrimalConfig(horizon=0.5), InteractionKernel.zero(dim=2),
                            [ParticleMeasure.dirac([0.0, 1.0])])
    assert metric_name(plane) == "d1_particles"
    line = solve_particles(PrimalConfig(horizon=0.5), QUADRATIC, [symmetric_pair])
    assert metric_name(line) == "d1_1d"


def test_dual_grid_surrounds_atoms(symmetric_pair):
    trajectory = solve_particles(PrimalConfig(horizon=0.5), QUADRATIC, [symmetric_pair])
    grid = dual_grid_for(trajectory)
    assert grid.lower[0] <= -2.0 and grid.upper[0] >= 2.0
    assert grid.cells == (256,)


def test_certificate_tolerance():
    grid = GridSpec.interval(-4.0, 4.0, 200)
    tolerance = certificate_tolerance(coordinate(0), 1.0, grid, 0.01, 0.02, 2.0, 0.1)
    assert tolerance == pytest.approx(1e-10 + 2.0 * (0.5 * 0.04 + 0.5 * 0.01 + 0.5 * 0.02) + 0.2)


class TestCertificate:
    @pytest.fixture
    def translated(self):
        grid = GridSpec.interval(-4.0, 4.0, 200)
        config = PrimalConfig(horizon=1.0, representation="grid", grid=grid)
        field = VelocityField.constant(0.5)
        return frozen_field_flow(config, field, [heat_kernel_density(grid, 0.25, 0.0, 0.0)]), field

    def test_constant_field_passes(self, translated):
        trajectory, field = translated
        certificate = certify_entropy_pair(trajectory, fields=field)
        assert certificate.passed
        assert certificate.metric == "d1_1d"
        assert len(certificate.records) == 8
        coordinate_record = certificate.to_frame().set_index("probe").loc["x1"]
        assert coordinate_record["lhs"] == pytest.approx(0.5, abs=1e-6)
        assert coordinate_record["residual"] < 1e-6

    def test_summary(self, translated):
        trajectory, field = translated
        certificate = certify_entropy_pair(trajectory, fields=field, probes=[coordinate(0)], horizons=[0.5, 1.0])
        summary = certificate.summary()
        assert set(summary) == {"passed", "max_residual", "horizons", "probes", "metric", "grid", "records", "flags"}
        assert summary["records"] == 2
        assert summary["probes"] == ["x1"]

    def test_needs_kernel_or_fields(self, translated):
        trajectory, _ = translated
        with pytest.raises(ConfigError):
            certify_entropy_pair(trajectory)


def test_continuous_dependence_of_translated_data(symmetric_pair):
    config = PrimalConfig(horizon=1.0)
    a = solve_particles(config, QUADRATIC, [symmetric_pair])
    b = solve_particles(config, QUADRATIC, [symmetric_pair.translate(0.3)])
    report = continuous_dependence_check(a, b, QUADRATIC, with_duality=False)
    assert report.initial_distance == pytest.approx(0.3)
    assert report.max_ratio == pytest.approx(1.0, rel=1e-6)
    assert not report.flagged
    assert report.duality is None


def test_semigroup_check(symmetric_pair):
    report = semigroup_check(PrimalConfig(horizon=1.0), QUADRATIC, [symmetric_pair], 0.4)
    assert report.passed
    assert report.defect < 1e-10


def test_semigroup_check_on_a_coupled_grid_run():
    grid = GridSpec.interval(-4.0, 4.0, 64)
    config = PrimalConfig(horizon=1.0, diffusion=0.05, representation="grid", grid=grid)
    kernel = InteractionKernel.single(Potential("gaussian", strength=0.5))
    report = semigroup_check(config, kernel, [heat_kernel_density(grid, 0.25, 0.0, 0.0)], 0.37)
    assert 0.0 < report.defect <= 2.0 * report.discretization_error
    assert report.passed
