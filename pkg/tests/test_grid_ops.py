import numpy as np
import pytest

from src.calculations.grid_ops import (
    cell_rates,
    dual_step,
    l2_gradient,
    lipschitz_constant,
    primal_step,
    stable_step,
    weighted_sup,
)
from src.core.errors import ConfigError
from src.core.measures import GridSpec

GRID = GridSpec.interval(-1.0, 1.0, 20)


def random_faces(rng: np.random.Generator, grid: GridSpec) -> list[np.ndarray]:
    return [rng.normal(size=grid.faces(a).shape[:-1]) for a in range(grid.dim)]


def test_diffusion_conserves_mass():
    rho = np.exp(-10.0 * GRID.axis_centers(0) ** 2)
    faces = [np.zeros(21)]
    dt = stable_step(faces, GRID, 0.1, 0.9)
    new, outflux = primal_step(rho, faces, GRID, 0.1, dt)
    assert outflux == 0.0
    assert new.sum() == pytest.approx(rho.sum(), rel=1e-14)


def test_outflow_is_booked():
    rho = np.zeros(20)
    rho[-1] = 1.0 / GRID.cell_volume
    faces = [np.full(21, 2.0)]
    dt = 0.5 * stable_step(faces, GRID, 0.0, 1.0)
    new, outflux = primal_step(rho, faces, GRID, 0.0, dt)
    assert outflux == pytest.approx(2.0 * dt / GRID.spacing[0])
    assert new.sum() * GRID.cell_volume + outflux == pytest.approx(1.0)


@pytest.mark.parametrize("diffusion", [0.0, 0.3])
def test_dual_step_is_the_transpose_of_the_primal_step(diffusion):
    rng = np.random.default_rng(3)
    faces = random_faces(rng, GRID)
    rho = rng.random(20)
    rho[0] = rho[-1] = 0.0
    psi = rng.normal(size=20)
    dt = stable_step(faces, GRID, diffusion, 0.9)
    forward, _ = primal_step(rho, faces, GRID, diffusion, dt)
    backward = dual_step(psi, faces, GRID, diffusion, dt)
    assert np.dot(psi, forward) == pytest.approx(np.dot(backward, rho), abs=1e-12)


def test_transpose_in_the_plane():
    rng = np.random.default_rng(11)
    grid = GridSpec((0.0, 0.0), (1.0, 2.0), (6, 7))
    faces = random_faces(rng, grid)
    rho = np.zeros(grid.shape)
    rho[1:-1, 1:-1] = rng.random((4, 5))
    psi = rng.normal(size=grid.shape)
    dt = stable_step(faces, grid, 0.05, 0.9)
    forward, _ = primal_step(rho, faces, grid, 0.05, dt)
    backward = dual_step(psi, faces, grid, 0.05, dt)
    assert np.sum(psi * forward) == pytest.approx(np.sum(backward * rho), abs=1e-12)


def test_dual_step_moves_linear_data_upwind():
    psi = GRID.axis_centers(0).copy()
    faces = [np.full(21, 0.5)]
    new = dual_step(psi, faces, GRID, 0.0, 0.01)
    np.testing.assert_allclose(new[:-1], psi[:-1] + 0.005)
    assert new[-1] == psi[-1]


def test_monotone_step_keeps_bounds():
    rng = np.random.default_rng(5)
    faces = random_faces(rng, GRID)
    psi = rng.random(20)
    ds = stable_step(faces, GRID, 0.2, 1.0)
    new = dual_step(psi, faces, GRID, 0.2, ds)
    assert new.min() >= psi.min() - 1e-14
    assert new.max() <= psi.max() + 1e-14


def test_unknown_boundary():
    with pytest.raises(ConfigError):
        dual_step(np.zeros(20), [np.zeros(21)], GRID, 0.0, 0.1, boundary="periodic")


def test_stable_step_limits():
    assert stable_step([np.zeros(21)], GRID, 0.0, 0.9) == np.inf
    with pytest.raises(ConfigError):
        stable_step([np.zeros(21)], GRID, 0.0, 0.0)
    rates = cell_rates([np.full(21, 1.0)], GRID, 0.0)
    assert rates.max() == pytest.approx(1.0 / GRID.spacing[0])


def test_discrete_norms():
    x = GRID.axis_centers(0)
    assert lipschitz_constant(3.0 * x, GRID) == pytest.approx(3.0)
    assert l2_gradient(x, GRID) == pytest.approx(np.sqrt(19 * GRID.spacing[0]))
    assert weighted_sup(x, GRID) == pytest.approx(0.95 / 1.95)
