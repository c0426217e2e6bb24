"""
Upwind finite-volume operators shared by the forward and backward solvers

Face velocities are the normal components E_a on the faces normal to axis a (shape of
the grid with one extra entry along a). With the same face velocities the backward
(dual) transport step is the exact transpose of the forward flux step, so the discrete
duality pairing only sees boundary and time-sampling effects.
"""

from typing import Sequence

import numpy as np

from src.core.errors import ConfigError
from src.core.measures import GridSpec

BOUNDARY_MODES = ("neumann", "linear")


def _front(array: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(array, axis, 0)


def cell_rates(faces: Sequence[np.ndarray], grid: GridSpec, diffusion: float) -> np.ndarray:
    """Per-cell total outgoing rate; the explicit step is monotone iff dt * rate <= 1"""
    rate = np.zeros(grid.shape)
    for axis, face in enumerate(faces):
        h = grid.spacing[axis]
        f = _front(face, axis)
        outgoing = (np.maximum(f[1:], 0.0) - np.minimum(f[:-1], 0.0)) / h
        rate += np.moveaxis(outgoing, 0, axis) + 2.0 * diffusion / h**2
    return rate


def stable_step(faces: Sequence[np.ndarray], grid: GridSpec, diffusion: float, cfl: float) -> float:
    """Largest monotone explicit step times the CFL safety factor"""
    if not 0.0 < cfl <= 1.0:
        raise ConfigError(f"CFL factor must lie in (0, 1], got {cfl}")
    peak = float(np.max(cell_rates(faces, grid, diffusion)))
    return np.inf if peak == 0.0 else cfl / peak


def primal_step(values: np.ndarray, faces: Sequence[np.ndarray], grid: GridSpec, diffusion: float,
                dt: float) -> tuple[np.ndarray, float]:
    """
    One conservative upwind step for d/dt rho = -div(E rho) + D Laplace rho

    Transport leaves through the walls (outflow); diffusion has zero flux at the walls.

    Returns:
        new density values and the mass that left the box during the step
    """
    new = values.copy()
    outflux = 0.0
    for axis, face in enumerate(faces):
        h = grid.spacing[axis]
        rho = _front(values, axis)
        e = _front(face, axis)
        n = rho.shape[0]
        padded = np.concatenate([np.zeros_like(rho[:1]), rho, np.zeros_like(rho[:1])])
        # face f sits between cells f-1 and f
        flux = np.maximum(e, 0.0) * padded[:-1] + np.minimum(e, 0.0) * padded[1:]
        if diffusion > 0.0:
            flux[1:n] -= diffusion * (rho[1:] - rho[:-1]) / h
        delta = -(dt / h) * (flux[1:] - flux[:-1])
        _front(new, axis)[...] += delta
        outflux += dt * (grid.cell_volume / h) * float(np.sum(flux[-1]) - np.sum(flux[0]))
    return new, outflux


def _ghosts(psi: np.ndarray, boundary: str) -> np.ndarray:
    """Pad along axis 0 with one ghost layer on each side"""
    if boundary == "neumann":
        low, high = psi[:1], psi[-1:]
    elif boundary == "linear":
        low = 2.0 * psi[:1] - psi[1:2]
        high = 2.0 * psi[-1:] - psi[-2:-1]
    else:
        raise ConfigError(f"Unknown boundary mode '{boundary}', expected one of {BOUNDARY_MODES}")
    return np.concatenate([low, psi, high])


def dual_step(psi: np.ndarray, faces: Sequence[np.ndarray], grid: GridSpec, diffusion: float, ds: float,
              boundary: str = "neumann") -> np.ndarray:
    """
    One monotone upwind step for d/ds psi = E . grad psi + D Laplace psi

    E > 0 on a face pulls information from the cell on its right, E < 0 from the left.
    """
    new = psi.copy()
    for axis, face in enumerate(faces):
        h = grid.spacing[axis]
        p = _ghosts(_front(psi, axis), boundary)
        e = _front(face, axis)
        forward = (p[2:] - p[1:-1]) / h
        backward = (p[1:-1] - p[:-2]) / h
        increment = np.maximum(e[1:], 0.0) * forward + np.minimum(e[:-1], 0.0) * backward
        if diffusion > 0.0:
            increment = increment + diffusion * (forward - backward) / h
        _front(new, axis)[...] += ds * increment
    return new


def axis_differences(psi: np.ndarray, grid: GridSpec) -> list[np.ndarray]:
    """Forward differences (psi[i+1] - psi[i]) / h along each axis"""
    return [np.diff(psi, axis=axis) / grid.spacing[axis] for axis in range(grid.dim)]


def lipschitz_constant(psi: np.ndarray, grid: GridSpec) -> float:
    """max_i ||d psi / d x_i||_inf on the grid"""
    return float(max(np.max(np.abs(d)) if d.size else 0.0 for d in axis_differences(psi, grid)))


def l2_gradient(psi: np.ndarray, grid: GridSpec) -> float:
    return float(np.sqrt(sum(np.sum(d * d) for d in axis_differences(psi, grid)) * grid.cell_volume))


def weighted_sup(values: np.ndarray, grid: GridSpec) -> float:
    """sup |f| / (1 + |x|) over cell centers"""
    radius = np.linalg.norm(grid.centers(), axis=-1)
    magnitude = np.abs(values) if values.shape == grid.shape else np.linalg.norm(values, axis=-1)
    return float(np.max(magnitude / (1.0 + radius)))


def field_gradient_sup(centers_values: np.ndarray, grid: GridSpec) -> float:
    """sup over cells of the operator norm of the finite-difference Jacobian of E"""
    if grid.dim == 1:
        return float(np.max(np.abs(np.gradient(centers_values[..., 0], grid.spacing[0]))))
    jac = np.empty(grid.shape + (grid.dim, grid.dim))
    for comp in range(grid.dim):
        for axis in range(grid.dim):
            jac[..., comp, axis] = np.gradient(centers_values[..., comp], grid.spacing[axis], axis=axis)
    return float(np.max(np.linalg.norm(jac, ord=2, axis=(-2, -1))))
