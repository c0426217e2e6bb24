import numpy as np
import pytest

from src.calculations.dual_solver import (
    DualConfig,
    audit_continuous_dependence,
    audit_gradient_bound,
    audit_l2_gradient,
    audit_maximum_principle,
    audit_support_growth,
    audit_time_continuity,
    audit_weighted_bound,
    characteristics_reference,
    field_difference_integral,
    solve_dual,
)
from src.calculations.probes import bump, coordinate, hat, smooth_step
from src.calculations.velocity import InteractionKernel, Potential, VelocityField, drift_field
from src.core.errors import ConfigError, UnsupportedError
from src.core.measures import GridSpec, ParticleMeasure

GRID = GridSpec.interval(-4.0, 4.0, 400)


def constant_solve(speed: float = 0.5, probe=None, snapshots=(0.25, 0.5), diffusion: float = 0.0):
    config = DualConfig(horizon=1.0, grid=GRID, diffusion=diffusion, snapshot_times=snapshots)
    return solve_dual(config, VelocityField.constant(speed), probe or coordinate(0))


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            DualConfig(horizon=0.0, grid=GRID)
        with pytest.raises(ConfigError):
            DualConfig(horizon=1.0, grid=GRID, boundary="periodic")
        with pytest.raises(ConfigError):
            DualConfig(horizon=1.0, grid=GRID, snapshot_times=(2.0,))

    def test_snapshot_times_always_hold_the_ends(self):
        assert DualConfig(horizon=1.0, grid=GRID, snapshot_times=(0.5,)).snapshot_times == (0.0, 0.5, 1.0)

    def test_fixed_step_above_cfl(self):
        config = DualConfig(horizon=1.0, grid=GRID, time_step=0.5)
        with pytest.raises(ConfigError):
            solve_dual(config, VelocityField.constant(1.0), coordinate(0))

    def test_psi0_shape(self):
        with pytest.raises(ConfigError):
            solve_dual(DualConfig(horizon=1.0, grid=GRID), VelocityField.zero(), np.zeros(3))


class TestSolve:
    def test_constant_field_translates_linear_data(self):
        solution = constant_solve()
        x = GRID.axis_centers(0)
        inside = np.abs(x) < 2.0
        for s in (0.25, 0.5, 1.0):
            np.testing.assert_allclose(solution.at(s)[inside], x[inside] + 0.5 * s, atol=1e-9)

    def test_missing_snapshot(self):
        with pytest.raises(ConfigError):
            constant_solve().at(0.3)

    def test_matches_characteristics(self):
        field = VelocityField.linear(-1.0)
        probe = smooth_step(0.3)
        fine = GridSpec.interval(-4.0, 4.0, 800)
        solution = solve_dual(DualConfig(horizon=1.0, grid=fine), field, probe)
        points = fine.centers().reshape(-1, 1)
        inside = np.abs(points[:, 0]) < 2.0
        reference = characteristics_reference(field, probe, 1.0, points[inside])
        np.testing.assert_allclose(solution.final[inside], reference, atol=2e-2)

    def test_integrate_against_atoms(self):
        solution = constant_solve()
        atoms = ParticleMeasure.from_atoms([(0.5, -1.0), (0.5, 0.0)])
        assert solution.integrate(atoms) == pytest.approx(-0.5 + 0.5, abs=1e-9)

    def test_history_and_frame(self):
        solution = constant_solve()
        history = solution.history
        assert history["s"].iloc[0] == 0.0
        assert history["s"].iloc[-1] == pytest.approx(1.0)
        assert {"sup_norm", "lipschitz", "weighted", "l2_gradient", "int_field_grad"} <= set(history.columns)
        assert list(solution.to_frame().columns) == ["x1", "psi"]

    def test_normalize_origin(self):
        config = DualConfig(horizon=0.5, grid=GRID, normalize_origin=True)
        solution = solve_dual(config, VelocityField.zero(), lambda x: x[:, 0] + 3.0)
        assert abs(solution.evaluate(np.zeros((1, 1)), 0.0)[0]) < 1e-12


class TestProperties:
    def test_linear_in_initial_datum(self):
        config = DualConfig(horizon=1.0, grid=GRID, diffusion=0.1)
        field = VelocityField.linear(-1.0)
        centers = GRID.centers().reshape(-1, 1)
        first = smooth_step(0.3)(centers).reshape(GRID.shape)
        second = hat(0.0, 1.0)(centers).reshape(GRID.shape)
        combined = solve_dual(config, field, 2.0 * first - 3.0 * second).final
        separate = 2.0 * solve_dual(config, field, first).final - 3.0 * solve_dual(config, field, second).final
        np.testing.assert_allclose(combined, separate, atol=1e-12)

    @pytest.mark.parametrize("boundary", ["neumann", "linear"])
    def test_constants_are_preserved(self, boundary):
        config = DualConfig(horizon=1.0, grid=GRID, diffusion=0.1, boundary=boundary)
        solution = solve_dual(config, VelocityField.linear(-1.0), np.ones(GRID.shape))
        np.testing.assert_array_equal(solution.final, 1.0)

    def test_comparison_principle(self):
        config = DualConfig(horizon=1.0, grid=GRID, diffusion=0.05, snapshot_times=(0.25, 0.5, 0.75))
        field = VelocityField.linear(-1.0)
        lower = solve_dual(config, field, hat(0.0, 1.0))
        upper = solve_dual(config, field, lambda x: hat(0.0, 1.0)(x) + bump(0.5, 1.0)(x))
        for s in lower.times:
            assert np.min(upper.at(s) - lower.at(s)) >= -1e-12

    def test_first_order_convergence_of_the_shift(self):
        errors = []
        for cells in (200, 400, 800):
            grid = GridSpec.interval(-4.0, 4.0, cells)
            solution = solve_dual(DualConfig(horizon=1.0, grid=grid), VelocityField.constant(0.5), smooth_step(0.0))
            x = grid.axis_centers(0)
            inside = np.abs(x) < 2.0
            errors.append(np.max(np.abs(solution.final[inside] - np.tanh(x[inside] + 0.5))))
        orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
        assert np.all(orders >= 0.8)

    def test_newtonian_field_moves_data_away_from_the_origin(self):
        kernel = InteractionKernel.single(Potential("smoothed_newtonian", k=1e4))
        field = drift_field(kernel, [ParticleMeasure.dirac(0.0)])
        grid = GridSpec.interval(-4.0, 4.0, 800)
        solution = solve_dual(DualConfig(horizon=0.5, grid=grid), field, smooth_step(0.0))
        x = grid.axis_centers(0)
        away = (np.abs(x) > 0.3) & (np.abs(x) < 2.0)
        expected = np.tanh(x[away] + np.sign(x[away]) * 0.5)
        np.testing.assert_allclose(solution.final[away], expected, atol=2e-3)


class TestAudits:
    def test_maximum_principle(self):
        solution = constant_solve(probe=hat(0.0, 1.0), diffusion=0.05)
        audit = audit_maximum_principle(solution)
        assert not audit.flagged
        assert audit.nonnegative_preserved is True
        assert audit.violation <= 1e-12

    def test_gradient_bound(self):
        audit = audit_gradient_bound(constant_solve())
        assert audit.max_ratio <= 1.0 + 1e-9
        assert not audit.flagged

    def test_weighted_bound(self):
        audit = audit_weighted_bound(constant_solve())
        assert not audit.flagged
        assert audit.sqrt_term_expected is False
        assert list(audit.modulus["s"]) == [0.25, 0.5, 1.0]

    def test_time_continuity(self):
        audit = audit_time_continuity(constant_solve(), VelocityField.constant(0.5))
        assert audit.initial_rate_bound == pytest.approx(0.5)
        assert audit.initial_ratio == pytest.approx(1.0, rel=1e-6)
        assert not audit.flagged

    def test_time_continuity_needs_autonomous_field(self):
        ramp = VelocityField(1, lambda t, x: np.full_like(x, t))
        solution = solve_dual(DualConfig(horizon=1.0, grid=GRID), ramp, coordinate(0))
        with pytest.raises(UnsupportedError):
            audit_time_continuity(solution, ramp)

    def test_continuous_dependence(self):
        first, second = constant_solve(0.5), constant_solve(0.3)
        audit = audit_continuous_dependence(first, second, VelocityField.constant(0.5), VelocityField.constant(0.3))
        assert audit.ratio == pytest.approx(1.0, rel=1e-6)
        assert not audit.flagged

    def test_continuous_dependence_needs_same_data(self):
        with pytest.raises(ConfigError):
            audit_continuous_dependence(constant_solve(probe=coordinate(0)), constant_solve(probe=hat(0.0, 1.0)),
                                        VelocityField.constant(0.5), VelocityField.constant(0.5))

    def test_field_difference_integral(self):
        gap = field_difference_integral(VelocityField.constant(1.0), VelocityField.constant(0.0), GRID, 2.0)
        nearest = np.min(np.abs(GRID.axis_centers(0)))
        assert gap == pytest.approx(2.0 / (1.0 + nearest))

    def test_l2_gradient(self):
        config = DualConfig(horizon=0.5, grid=GRID, diffusion=0.1)
        solution = solve_dual(config, VelocityField.zero(), hat(0.0, 1.0))
        audit = audit_l2_gradient(solution)
        assert audit.nonincreasing
        assert not audit.flagged

    def test_l2_gradient_needs_diffusion(self):
        with pytest.raises(UnsupportedError):
            audit_l2_gradient(constant_solve())

    def test_support_growth(self):
        audit = audit_support_growth(constant_solve(probe=hat(0.0, 1.0)))
        assert audit.initial_radius == pytest.approx(1.0, abs=GRID.spacing[0])
        assert not audit.flagged

    def test_support_growth_needs_pure_transport(self):
        with pytest.raises(UnsupportedError):
            audit_support_growth(constant_solve(diffusion=0.1))
