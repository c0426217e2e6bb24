"""
Measure representations

Probability measures on R^d are carried either as weighted atoms (exact for D=0
dynamics) or as cell-averaged densities on a uniform box grid. Both are immutable:
arrays are copied and frozen at construction.
"""

from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from src.core.errors import ConfigError, DimensionError, NormalizationError

WEIGHT_TOL = 1e-12
MASS_TOL = 1e-10


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class GridSpec:
    """
    Uniform box grid, 1D or 2D

    Cells are indexed [i0, i1]; centers sit at lower + (i + 1/2) * h.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        object.__setattr__(self, "cells", tuple(int(n) for n in self.cells))
        if not (len(self.lower) == len(self.upper) == len(self.cells)):
            raise ConfigError("Grid lower/upper/cells must have the same length")
        if self.dim not in (1, 2):
            raise ConfigError(f"Grids are 1D or 2D, got dim={self.dim}")
        if any(n < 2 for n in self.cells):
            raise ConfigError(f"Need at least 2 cells per axis, got {self.cells}")
        if any(hi <= lo for lo, hi in zip(self.lower, self.upper)):
            raise ConfigError(f"Empty box {self.lower} -> {self.upper}")

    @classmethod
    def interval(cls, lower: float, upper: float, cells: int) -> "GridSpec":
        return cls((lower,), (upper,), (cells,))

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / np.array(self.cells)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis_centers(self, axis: int) -> np.ndarray:
        h = self.spacing[axis]
        return self.lower[axis] + h * (np.arange(self.cells[axis]) + 0.5)

    def axis_edges(self, axis: int) -> np.ndarray:
        return np.linspace(self.lower[axis], self.upper[axis], self.cells[axis] + 1)

    def centers(self) -> np.ndarray:
        """Cell centers as an array of shape (*cells, dim)"""
        axes = [self.axis_centers(a) for a in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def faces(self, axis: int) -> np.ndarray:
        """Face midpoints normal to `axis`, shape (*cells with cells[axis]+1, dim)"""
        axes = [self.axis_centers(a) for a in range(self.dim)]
        axes[axis] = self.axis_edges(axis)
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def refined(self, factor: int, inflate: float = 0.0) -> "GridSpec":
        """Grid over the box inflated by `inflate` (relative) with `factor` times the cells"""
        lower = np.array(self.lower)
        upper = np.array(self.upper)
        pad = 0.5 * inflate * (upper - lower)
        cells = tuple(int(round(n * factor * (1.0 + inflate))) for n in self.cells)
        return GridSpec(tuple(lower - pad), tuple(upper + pad), cells)

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.all((points >= np.array(self.lower)) & (points <= np.array(self.upper)), axis=-1)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "cells": list(self.cells)}


@dataclass(frozen=True)
class ParticleMeasure:
    """
    Weighted atoms sum_k w_k delta_{x_k}

    Attributes:
        weights: shape (n,), nonnegative, summing to 1 within 1e-12
        positions: shape (n, dim), finite
    """

    weights: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        positions = np.asarray(self.positions, dtype=float)
        if positions.ndim == 1:
            positions = positions.reshape(-1, 1)
        if positions.shape[0] != weights.shape[0]:
            raise DimensionError(f"{weights.shape[0]} weights for {positions.shape[0]} positions")
        if weights.size == 0:
            raise NormalizationError("Empty atom list")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise NormalizationError("Atom weights must be finite and nonnegative")
        if not np.all(np.isfinite(positions)):
            raise NormalizationError("Atom positions must be finite")
        total = weights.sum()
        if abs(total - 1.0) > WEIGHT_TOL:
            raise NormalizationError(f"Atom weights sum to {total:.15g}, expected 1")
        object.__setattr__(self, "weights", _frozen(weights))
        object.__setattr__(self, "positions", _frozen(positions))

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def normalized(cls, weights: Sequence[float], positions) -> "ParticleMeasure":
        """Rescale nonnegative weights to unit mass"""
        weights = np.asarray(weights, dtype=float)
        total = weights.sum()
        if total <= 0:
            raise NormalizationError("Weights carry no mass")
        return cls(weights / total, positions)

    @classmethod
    def dirac(cls, point: Union[float, Sequence[float]] = 0.0) -> "ParticleMeasure":
        point = np.atleast_1d(np.asarray(point, dtype=float))
        return cls(np.ones(1), point.reshape(1, -1))

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple[float, Union[float, Sequence[float]]]]) -> "ParticleMeasure":
        atoms = list(atoms)
        weights = [w for w, _ in atoms]
        positions = [np.atleast_1d(np.asarray(x, dtype=float)) for _, x in atoms]
        return cls(weights, np.vstack(positions))

    @classmethod
    def uniform_segment(cls, a: float, b: float, n: int) -> "ParticleMeasure":
        """n equal atoms at the midpoints of a uniform partition of [a, b]"""
        if n < 1 or b <= a:
            raise ConfigError(f"Invalid segment [{a}, {b}] with {n} atoms")
        x = a + (b - a) * (np.arange(n) + 0.5) / n
        return cls(np.full(n, 1.0 / n), x.reshape(-1, 1))

    def translate(self, shift: Union[float, Sequence[float]]) -> "ParticleMeasure":
        return ParticleMeasure(self.weights, self.positions + np.asarray(shift, dtype=float))

    def mirror(self) -> "ParticleMeasure":
        return ParticleMeasure(self.weights, -self.positions)

    def mean(self) -> np.ndarray:
        return self.weights @ self.positions

    def with_positions(self, positions: np.ndarray) -> "ParticleMeasure":
        return ParticleMeasure(self.weights, positions)

    def to_grid(self, grid: GridSpec) -> "GridDensity":
        """Cloud-in-cell deposit; atoms outside the box go to the nearest edge cell"""
        if grid.dim != self.dim:
            raise DimensionError(f"Measure dim {self.dim} vs grid dim {grid.dim}")
        masses = np.zeros(grid.shape)
        h = grid.spacing
        frac = (self.positions - np.array(grid.lower)) / h - 0.5
        base = np.floor(frac).astype(int)
        theta = frac - base
        # every corner of the CIC stencil, clipped into the grid
        for corner in np.ndindex(*(2,) * grid.dim):
            corner = np.array(corner)
            share = np.prod(np.where(corner == 1, theta, 1.0 - theta), axis=1) * self.weights
            idx = np.clip(base + corner, 0, np.array(grid.cells) - 1)
            np.add.at(masses, tuple(idx.T), share)
        return GridDensity(grid, masses / grid.cell_volume)


@dataclass(frozen=True)
class GridDensity:
    """
    Cell-averaged density on a GridSpec

    `outflux` is the mass that has left the box through the boundary; the invariant is
    values.sum() * cellvol + outflux == 1 within 1e-10.
    """

    grid: GridSpec
    values: np.ndarray
    outflux: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise DimensionError(f"Values shape {values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise NormalizationError("Grid density values must be finite and nonnegative")
        total = values.sum() * self.grid.cell_volume + self.outflux
        if abs(total - 1.0) > MASS_TOL:
            raise NormalizationError(f"Grid mass {total:.12g} (incl. outflux), expected 1")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "outflux", float(self.outflux))

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def masses(self) -> np.ndarray:
        return self.values * self.grid.cell_volume

    @property
    def mass(self) -> float:
        return float(self.masses.sum())

    @classmethod
    def from_masses(cls, grid: GridSpec, masses: np.ndarray, outflux: float = 0.0) -> "GridDensity":
        return cls(grid, np.asarray(masses, dtype=float) / grid.cell_volume, outflux)

    @classmethod
    def from_function(cls, grid: GridSpec, density: Callable[[np.ndarray], np.ndarray]) -> "GridDensity":
        """Sample a density at cell centers and normalize to unit mass"""
        centers = grid.centers()
        values = np.asarray(density(centers), dtype=float).reshape(grid.shape)
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise NormalizationError("Density samples must be finite and nonnegative")
        total = values.sum() * grid.cell_volume
        if total <= 0:
            raise NormalizationError("Density has no mass on the grid")
        return cls(grid, values / total)

    @classmethod
    def uniform(cls, grid: GridSpec) -> "GridDensity":
        return cls(grid, np.full(grid.shape, 1.0 / np.prod(np.array(grid.upper) - np.array(grid.lower))))

    def translate(self, shift: Union[float, Sequence[float]]) -> "GridDensity":
        shift = np.broadcast_to(np.asarray(shift, dtype=float), (self.dim,))
        grid = GridSpec(tuple(np.array(self.grid.lower) + shift), tuple(np.array(self.grid.upper) + shift), self.grid.cells)
        return GridDensity(grid, self.values, self.outflux)

    def renormalized(self) -> "GridDensity":
        """Drop the outflux ledger and rescale the remaining mass to 1"""
        return GridDensity(self.grid, self.values / self.mass)

    def to_particles(self, drop_empty: bool = True) -> ParticleMeasure:
        masses = self.masses.reshape(-1)
        points = self.grid.centers().reshape(-1, self.dim)
        if drop_empty:
            keep = masses > 0
            masses, points = masses[keep], points[keep]
        return ParticleMeasure.normalized(masses, points)


Measure = Union[ParticleMeasure, GridDensity]


def measure_dim(measure: Measure) -> int:
    return measure.dim


def integrate(measure: Measure, values_or_func, grid: Optional[GridSpec] = None) -> float:
    """
    Integrate a function against a measure with the measure's native quadrature

    `values_or_func` is either a callable on points (n, dim) or an array of samples on
    `grid` (cell centers); arrays are linearly interpolated at atom positions.
    """
    if callable(values_or_func):
        if isinstance(measure, ParticleMeasure):
            return float(measure.weights @ np.asarray(values_or_func(measure.positions), dtype=float).reshape(-1))
        samples = np.asarray(values_or_func(measure.grid.centers()), dtype=float).reshape(measure.grid.shape)
        return float(np.sum(samples * measure.masses))

    samples = np.asarray(values_or_func, dtype=float)
    if grid is None:
        raise ConfigError("Grid samples need their GridSpec")
    if isinstance(measure, GridDensity):
        if measure.grid == grid:
            return float(np.sum(samples * measure.masses))
        return float(measure.masses.reshape(-1) @ interpolate_on_grid(grid, samples, measure.grid.centers().reshape(-1, grid.dim)))
    return float(measure.weights @ interpolate_on_grid(grid, samples, measure.positions))


def interpolate_on_grid(grid: GridSpec, samples: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Linear interpolation of cell-center samples; constant beyond the outer centers"""
    points = np.atleast_2d(points)
    if grid.dim == 1:
        return np.interp(points[:, 0], grid.axis_centers(0), samples)
    axes = tuple(grid.axis_centers(a) for a in range(grid.dim))
    clipped = np.clip(points, [a[0] for a in axes], [a[-1] for a in axes])
    return RegularGridInterpolator(axes, samples, method="linear")(clipped)
