"""
Interaction kernels and velocity fields

K^i[mu](x) = sum_j (grad W_ij * mu^j)(x) and the drift used by both solvers is
E = -K. Particle states are summed exactly; grid states use midpoint quadrature, either
directly or by FFT convolution when the evaluation points are the grid's own centers or
faces.
"""

from collections import OrderedDict
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence, Union

import numpy as np
import structlog
from scipy.interpolate import CubicSpline
from scipy.signal import fftconvolve

from src.calculations.metrics import d1
from src.config import get_settings
from src.core.errors import ConfigError, DimensionError, KernelEvalError
from src.core.measures import GridDensity, GridSpec, Measure, ParticleMeasure

logger = structlog.get_logger(__name__)

POTENTIAL_FORMS = ("quadratic", "smoothed_newtonian", "gaussian", "tabulated_radial")

# pairwise blocks are chunked so that (points x sources x dim) stays near this many floats
_PAIR_BLOCK = 4_000_000


@dataclass(frozen=True)
class Potential:
    """
    One radial interaction potential W

    Forms:
        quadratic:           W = strength * |x|^2 / 2
        smoothed_newtonian:  W = -strength * (|x|^2 + 1/k)^(1/2)
        gaussian:            W = -strength * exp(-|x|^2 / (2 sigma^2))
        tabulated_radial:    W'(r) given on a table, cubic spline in r
    """

    form: str
    strength: float = 1.0
    k: float = 100.0
    sigma: float = 1.0
    radii: tuple[float, ...] = ()
    derivatives: tuple[float, ...] = ()

    def __post_init__(self):
        if self.form not in POTENTIAL_FORMS:
            raise ConfigError(f"Unknown potential form '{self.form}', expected one of {POTENTIAL_FORMS}")
        if self.form == "smoothed_newtonian" and self.k <= 0:
            raise ConfigError("Smoothed Newtonian potential needs k > 0")
        if self.form == "gaussian" and self.sigma <= 0:
            raise ConfigError("Gaussian potential needs sigma > 0")
        if self.form == "tabulated_radial":
            r = np.asarray(self.radii, dtype=float)
            if r.size < 4 or r.size != len(self.derivatives) or np.any(np.diff(r) <= 0) or r[0] < 0:
                raise ConfigError("Tabulated potential needs >= 4 increasing radii with matching W'(r) values")
        object.__setattr__(self, "radii", tuple(float(v) for v in self.radii))
        object.__setattr__(self, "derivatives", tuple(float(v) for v in self.derivatives))

    @cached_property
    def _spline(self) -> CubicSpline:
        return CubicSpline(np.asarray(self.radii), np.asarray(self.derivatives), bc_type="natural")

    def _radial_derivative(self, r: np.ndarray) -> np.ndarray:
        radii = np.asarray(self.radii)
        inside = np.clip(r, radii[0], radii[-1])
        return self._spline(inside)

    @property
    def is_even(self) -> bool:
        # all supported forms are radial
        return True

    def gradient(self, z: np.ndarray) -> np.ndarray:
        """grad W at displacements z of shape (..., dim)"""
        z = np.asarray(z, dtype=float)
        sq = np.sum(z * z, axis=-1, keepdims=True)
        if self.form == "quadratic":
            return self.strength * z
        if self.form == "smoothed_newtonian":
            return -self.strength * z / np.sqrt(sq + 1.0 / self.k)
        if self.form == "gaussian":
            return self.strength * z / self.sigma**2 * np.exp(-sq / (2.0 * self.sigma**2))
        r = np.sqrt(sq)
        scale = np.divide(self._radial_derivative(r), r, out=np.zeros_like(r), where=r > 0)
        return scale * z

    def value(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        sq = np.sum(z * z, axis=-1)
        if self.form == "quadratic":
            return 0.5 * self.strength * sq
        if self.form == "smoothed_newtonian":
            return -self.strength * np.sqrt(sq + 1.0 / self.k)
        if self.form == "gaussian":
            return -self.strength * np.exp(-sq / (2.0 * self.sigma**2))
        return self._spline.antiderivative()(np.clip(np.sqrt(sq), self.radii[0], self.radii[-1]))

    @cached_property
    def _tabulated_profile(self) -> tuple[np.ndarray, np.ndarray]:
        r = np.linspace(self.radii[0], self.radii[-1], 4001)
        second = self._spline(r, 1)
        ratio = np.divide(self._spline(r), r, out=second.copy(), where=r > 0)
        return second, ratio

    @property
    def hessian_bound(self) -> float:
        """sup |D^2 W|, the Lipschitz constant of grad W"""
        if self.form == "quadratic":
            return abs(self.strength)
        if self.form == "smoothed_newtonian":
            return abs(self.strength) * np.sqrt(self.k)
        if self.form == "gaussian":
            return abs(self.strength) / self.sigma**2
        second, ratio = self._tabulated_profile
        return float(max(np.max(np.abs(second)), np.max(np.abs(ratio))))

    @property
    def is_convex(self) -> bool:
        if self.form == "quadratic":
            return self.strength >= 0
        if self.form == "smoothed_newtonian":
            return self.strength <= 0
        if self.form == "gaussian":
            return self.strength == 0
        second, ratio = self._tabulated_profile
        return bool(np.all(second >= -1e-12) and np.all(ratio >= -1e-12))

    def to_dict(self) -> dict:
        data = {"form": self.form, "strength": self.strength}
        if self.form == "smoothed_newtonian":
            data["k"] = self.k
        if self.form == "gaussian":
            data["sigma"] = self.sigma
        if self.form == "tabulated_radial":
            data["radii"] = list(self.radii)
            data["derivatives"] = list(self.derivatives)
        return data


@dataclass(frozen=True)
class InteractionKernel:
    """
    n x n assignment of potentials; entry (i, j) is W_ij acting on species j in the
    velocity of species i, None meaning no interaction.
    """

    dim: int
    matrix: tuple[tuple[Optional[Potential], ...], ...]

    def __post_init__(self):
        matrix = tuple(tuple(row) for row in self.matrix)
        n = len(matrix)
        if n == 0 or any(len(row) != n for row in matrix):
            raise ConfigError("Kernel matrix must be square and non-empty")
        if self.dim not in (1, 2):
            raise ConfigError(f"Kernels are 1D or 2D, got dim={self.dim}")
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def single(cls, potential: Optional[Potential], dim: int = 1) -> "InteractionKernel":
        return cls(dim, ((potential,),))

    @classmethod
    def zero(cls, n_species: int = 1, dim: int = 1) -> "InteractionKernel":
        return cls(dim, tuple((None,) * n_species for _ in range(n_species)))

    @classmethod
    def two_species(cls, self_1: Optional[Potential], self_2: Optional[Potential], cross_12: Optional[Potential],
                    cross_21: Optional[Potential] = None, dim: int = 1) -> "InteractionKernel":
        """K^1 = grad H1 * mu^1 + grad K12 * mu^2, K^2 = grad K21 * mu^1 + grad H2 * mu^2"""
        cross_21 = cross_12 if cross_21 is None else cross_21
        return cls(dim, ((self_1, cross_12), (cross_21, self_2)))

    @property
    def n_species(self) -> int:
        return len(self.matrix)

    @property
    def is_zero(self) -> bool:
        return all(p is None for row in self.matrix for p in row)

    @property
    def is_convex(self) -> bool:
        return all(p is None or p.is_convex for row in self.matrix for p in row)

    def lipschitz_bound(self, species: Optional[int] = None) -> float:
        """sum_j sup|D^2 W_ij|, maximised over species when none is given"""
        rows = range(self.n_species) if species is None else [species]
        return float(max(sum(p.hessian_bound for p in self.matrix[i] if p is not None) for i in rows))

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "matrix": [[p.to_dict() if p is not None else None for p in row] for row in self.matrix],
        }


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------

def _direct_sum(potential: Potential, points: np.ndarray, sources: np.ndarray, masses: np.ndarray) -> np.ndarray:
    """sum_m masses[m] grad W(points - sources[m]) in blocks of query points"""
    out = np.zeros_like(points)
    chunk = max(1, _PAIR_BLOCK // max(1, sources.shape[0] * points.shape[1]))
    for start in range(0, points.shape[0], chunk):
        z = points[start:start + chunk, None, :] - sources[None, :, :]
        out[start:start + chunk] = np.einsum("pmd,m->pd", potential.gradient(z), masses)
    return out


def _sources(measure: Measure) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(measure, ParticleMeasure):
        return measure.positions, measure.weights
    return measure.grid.centers().reshape(-1, measure.dim), measure.masses.reshape(-1)


def convolve_on_grid(potential: Potential, density: GridDensity, axis: Optional[int] = None) -> np.ndarray:
    """
    FFT midpoint convolution grad W * mu on the density's own lattice

    Args:
        potential: interaction potential
        density: grid density (masses at cell centers)
        axis: None for cell centers, otherwise faces normal to this axis

    Returns:
        array (*points_shape, dim); faces have cells[axis] + 1 entries along `axis`
    """
    grid = density.grid
    h = grid.spacing
    counts = [n + (1 if a == axis else 0) for a, n in enumerate(grid.cells)]
    offsets = []
    for a, n in enumerate(grid.cells):
        k = np.arange(-(n - 1), counts[a])
        offsets.append((k - (0.5 if a == axis else 0.0)) * h[a])
    displacement = np.stack(np.meshgrid(*offsets, indexing="ij"), axis=-1)
    gradient = potential.gradient(displacement)
    masses = density.masses
    window = tuple(slice(n - 1, n - 1 + c) for n, c in zip(grid.cells, counts))
    components = [fftconvolve(masses, gradient[..., c], mode="full")[window] for c in range(grid.dim)]
    return np.stack(components, axis=-1)


def eval_velocity(kernel: InteractionKernel, state: Sequence[Measure], species: int, t: float,
                  points: np.ndarray) -> np.ndarray:
    """
    K^i[mu](x) = sum_j sum_atoms w grad W_ij(x - y) at query points

    Grid states use direct midpoint quadrature here; `convolve_on_grid` is the FFT path
    for lattice-aligned points. `t` is accepted for path-dependent operators and unused
    by the autonomous kernels.

    Raises:
        KernelEvalError: species out of range or NaN in the result
    """
    if not 0 <= species < kernel.n_species:
        raise KernelEvalError(f"Species {species} out of range for a {kernel.n_species}-species kernel")
    if len(state) != kernel.n_species:
        raise DimensionError(f"State has {len(state)} species, kernel expects {kernel.n_species}")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != kernel.dim:
        points = points.reshape(-1, kernel.dim)
    result = np.zeros_like(points)
    for j, potential in enumerate(kernel.matrix[species]):
        if potential is None:
            continue
        if state[j].dim != kernel.dim:
            raise DimensionError(f"Species {j} has dim {state[j].dim}, kernel dim {kernel.dim}")
        sources, masses = _sources(state[j])
        result += _direct_sum(potential, points, sources, masses)
    if not np.all(np.isfinite(result)):
        raise KernelEvalError(f"Non-finite velocity for species {species} at t={t}")
    return result


def _kernel_on_lattice(kernel: InteractionKernel, state: Sequence[Measure], species: int,
                       grid: GridSpec, axis: Optional[int]) -> np.ndarray:
    """K^i on centers (axis None) or faces of `grid`, FFT where the source shares the grid"""
    points = grid.centers() if axis is None else grid.faces(axis)
    shape = points.shape
    result = np.zeros(shape)
    for j, potential in enumerate(kernel.matrix[species]):
        if potential is None:
            continue
        source = state[j]
        if isinstance(source, GridDensity) and source.grid == grid:
            result += convolve_on_grid(potential, source, axis)
        else:
            srcs, masses = _sources(source)
            result += _direct_sum(potential, points.reshape(-1, grid.dim), srcs, masses).reshape(shape)
    if not np.all(np.isfinite(result)):
        raise KernelEvalError(f"Non-finite velocity for species {species} on grid")
    return result


# ---------------------------------------------------------------------------
# Velocity fields
# ---------------------------------------------------------------------------

@dataclass
class Lip0Record:
    t: float
    grad_sup: float
    weighted_sup: float
    at_origin: float
    norm: float
    sandwich_ok: bool


class VelocityField:
    """
    Drift E_t(x) over [0, T] x box with Lip0 bookkeeping

    Subclasses override `_faces`/`_centers` when they have a faster lattice path.
    """

    def __init__(self, dim: int, func: Callable[[float, np.ndarray], np.ndarray], label: str = "field",
                 autonomous: bool = False):
        self.dim = dim
        self._func = func
        self.label = label
        self.autonomous = autonomous
        self.lip0: dict[float, Lip0Record] = {}

    @classmethod
    def constant(cls, value: Union[float, Sequence[float]], dim: Optional[int] = None) -> "VelocityField":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        dim = dim or value.size
        value = np.broadcast_to(value, (dim,))
        return cls(dim, lambda t, x: np.broadcast_to(value, x.shape).copy(), label=f"constant{tuple(value)}",
                   autonomous=True)

    @classmethod
    def linear(cls, rate: float, dim: int = 1) -> "VelocityField":
        """E(x) = rate * x"""
        return cls(dim, lambda t, x: rate * x, label=f"linear({rate})", autonomous=True)

    @classmethod
    def zero(cls, dim: int = 1) -> "VelocityField":
        return cls.constant(np.zeros(dim), dim)

    def __call__(self, t: float, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, self.dim)
        values = np.asarray(self._func(t, points), dtype=float).reshape(points.shape)
        if not np.all(np.isfinite(values)):
            raise KernelEvalError(f"Field '{self.label}' is not finite at t={t}")
        return values

    def _faces(self, t: float, grid: GridSpec, axis: int) -> np.ndarray:
        points = grid.faces(axis)
        return self(t, points.reshape(-1, self.dim)).reshape(points.shape)

    def _centers(self, t: float, grid: GridSpec) -> np.ndarray:
        points = grid.centers()
        return self(t, points.reshape(-1, self.dim)).reshape(points.shape)

    def on_faces(self, t: float, grid: GridSpec) -> list[np.ndarray]:
        """Normal component E_a on the faces normal to each axis a"""
        if grid.dim != self.dim:
            raise DimensionError(f"Field dim {self.dim} vs grid dim {grid.dim}")
        return [self._faces(t, grid, a)[..., a] for a in range(grid.dim)]

    def on_centers(self, t: float, grid: GridSpec) -> np.ndarray:
        if grid.dim != self.dim:
            raise DimensionError(f"Field dim {self.dim} vs grid dim {grid.dim}")
        return self._centers(t, grid)

    def shifted(self, t0: float) -> "VelocityField":
        """t -> E_{t0 + t}"""
        return _ShiftedField(self, t0)


class _ShiftedField(VelocityField):
    def __init__(self, base: VelocityField, t0: float):
        super().__init__(base.dim, lambda t, x: base(t + t0, x), label=f"{base.label}+{t0}",
                         autonomous=base.autonomous)
        self.base = base
        self.t0 = t0

    def _faces(self, t, grid, axis):
        return self.base._faces(t + self.t0, grid, axis)

    def _centers(self, t, grid):
        return self.base._centers(t + self.t0, grid)


class StateDriftField(VelocityField):
    """E = -K^i[state], frozen in time"""

    def __init__(self, kernel: InteractionKernel, state: Sequence[Measure], species: int = 0):
        if not 0 <= species < kernel.n_species:
            raise KernelEvalError(f"Species {species} out of range")
        self.kernel = kernel
        self.state = list(state)
        self.species = species
        self._lattice_cache: dict = {}
        super().__init__(kernel.dim, lambda t, x: -eval_velocity(kernel, self.state, species, t, x),
                         label=f"drift[{species}]", autonomous=True)

    def _lattice(self, grid: GridSpec, axis: Optional[int]) -> np.ndarray:
        key = (grid, axis)
        if key not in self._lattice_cache:
            self._lattice_cache[key] = -_kernel_on_lattice(self.kernel, self.state, self.species, grid, axis)
        return self._lattice_cache[key]

    def _faces(self, t, grid, axis):
        return self._lattice(grid, axis)

    def _centers(self, t, grid):
        return self._lattice(grid, None)


class TrajectoryDriftField(VelocityField):
    """
    E_t = -K^i[mu_t] along a stored trajectory, linear in time between output times

    The trajectory only needs `times` and `states` (list over times of species lists).
    """

    _CACHE_SIZE = 64

    def __init__(self, kernel: InteractionKernel, trajectory, species: int = 0):
        if not 0 <= species < kernel.n_species:
            raise KernelEvalError(f"Species {species} out of range")
        self.kernel = kernel
        self.times = np.asarray(trajectory.times, dtype=float)
        self.states = trajectory.states
        self.species = species
        self._cache: OrderedDict = OrderedDict()
        super().__init__(kernel.dim, self._evaluate, label=f"trajectory-drift[{species}]")

    def _bracket(self, t: float) -> tuple[int, int, float]:
        if self.times.size == 1 or t <= self.times[0]:
            return 0, 0, 0.0
        if t >= self.times[-1]:
            last = self.times.size - 1
            return last, last, 0.0
        k = int(np.searchsorted(self.times, t, side="right") - 1)
        theta = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        return k, k + 1, float(theta)

    def _cached(self, key, compute):
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        value = compute()
        self._cache[key] = value
        if len(self._cache) > self._CACHE_SIZE:
            self._cache.popitem(last=False)
        return value

    def _blend(self, t: float, snapshot: Callable[[int], np.ndarray]) -> np.ndarray:
        k0, k1, theta = self._bracket(t)
        first = snapshot(k0)
        if theta == 0.0 or k0 == k1:
            return first
        return (1.0 - theta) * first + theta * snapshot(k1)

    def _evaluate(self, t: float, points: np.ndarray) -> np.ndarray:
        tag = hash(points.tobytes())
        return self._blend(t, lambda k: self._cached(
            (k, "points", tag), lambda: -eval_velocity(self.kernel, self.states[k], self.species, self.times[k], points)))

    def _faces(self, t, grid, axis):
        return self._blend(t, lambda k: self._cached(
            (k, grid, axis), lambda: -_kernel_on_lattice(self.kernel, self.states[k], self.species, grid, axis)))

    def _centers(self, t, grid):
        return self._blend(t, lambda k: self._cached(
            (k, grid, None), lambda: -_kernel_on_lattice(self.kernel, self.states[k], self.species, grid, None)))


def drift_field(kernel: InteractionKernel, state: Sequence[Measure], species: int = 0) -> StateDriftField:
    return StateDriftField(kernel, state, species)


def drift_from_trajectory(kernel: InteractionKernel, trajectory, species: int = 0) -> TrajectoryDriftField:
    return TrajectoryDriftField(kernel, trajectory, species)


# ---------------------------------------------------------------------------
# Audits
# ---------------------------------------------------------------------------

def audit_lattice(grid: GridSpec, inflate: Optional[float] = None, refine: Optional[int] = None) -> tuple[list[np.ndarray], np.ndarray]:
    """Node lattice over the inflated box; returns per-axis nodes and points (*shape, dim)"""
    settings = get_settings()
    inflate = settings.lattice_inflation if inflate is None else inflate
    refine = settings.lattice_refinement if refine is None else refine
    fine = grid.refined(refine, inflate)
    nodes = [fine.axis_edges(a) for a in range(grid.dim)]
    return nodes, np.stack(np.meshgrid(*nodes, indexing="ij"), axis=-1)


def _jacobian_norm(values: np.ndarray, nodes: list[np.ndarray]) -> np.ndarray:
    dim = len(nodes)
    if dim == 1:
        return np.abs(np.gradient(values[..., 0], nodes[0]))
    jac = np.empty(values.shape[:-1] + (dim, dim))
    for comp in range(dim):
        for axis in range(dim):
            jac[..., comp, axis] = np.gradient(values[..., comp], nodes[axis], axis=axis)
    return np.linalg.norm(jac, ord=2, axis=(-2, -1))


def lip0_norm(field: VelocityField, t: float, grid: GridSpec, inflate: Optional[float] = None,
              refine: Optional[int] = None) -> Lip0Record:
    """
    ||E_t||_Lip0 = sup|grad E| + sup|E|/(1+|x|) on the audit lattice

    The record is also stored in `field.lip0[t]`.
    """
    nodes, points = audit_lattice(grid, inflate, refine)
    values = field(t, points.reshape(-1, field.dim)).reshape(points.shape)
    grad_sup = float(np.max(_jacobian_norm(values, nodes)))
    weights = 1.0 + np.linalg.norm(points, axis=-1)
    at_origin = float(np.linalg.norm(field(t, np.zeros((1, field.dim)))[0]))
    weighted_sup = float(max(np.max(np.linalg.norm(values, axis=-1) / weights), at_origin))
    norm = grad_sup + weighted_sup
    lower = at_origin + grad_sup
    sandwich_ok = lower <= norm + 1e-12 and norm <= 2.0 * lower * (1.0 + 0.02) + 1e-12
    record = Lip0Record(t=float(t), grad_sup=grad_sup, weighted_sup=weighted_sup, at_origin=at_origin,
                        norm=norm, sandwich_ok=bool(sandwich_ok))
    field.lip0[float(t)] = record
    if not sandwich_ok:
        logger.warning("Lip0 sandwich violated", field=field.label, t=t, norm=norm, lower=lower)
    return record


@dataclass
class LipschitzAudit:
    numerator: float
    distances: list[float]
    ratio: float
    limit: float
    flagged: bool


def lipschitz_audit(kernel: InteractionKernel, state: Sequence[Measure], state_hat: Sequence[Measure], t: float,
                    grid: GridSpec, limit: Optional[float] = None) -> LipschitzAudit:
    """
    Empirical constant of sup |K[mu]-K[mu_hat]|/(1+|x|) <= L * max_i d1(mu^i, mu_hat^i)

    Raises:
        SizeError: propagated from d1 when the pair is too large for exact OT
    """
    _, points = audit_lattice(grid)
    flat = points.reshape(-1, kernel.dim)
    weights = 1.0 + np.linalg.norm(flat, axis=-1)
    numerator = 0.0
    for i in range(kernel.n_species):
        gap = eval_velocity(kernel, state, i, t, flat) - eval_velocity(kernel, state_hat, i, t, flat)
        numerator = max(numerator, float(np.max(np.linalg.norm(gap, axis=-1) / weights)))
    distances = [d1(a, b) for a, b in zip(state, state_hat)]
    distance = max(distances)
    if numerator == 0.0:
        ratio = 0.0
    elif distance == 0.0:
        ratio = float("inf")
    else:
        ratio = numerator / distance
    limit = kernel.lipschitz_bound() if limit is None else limit
    flagged = ratio > limit * (1.0 + get_settings().audit_slack)
    if flagged:
        logger.warning("Lipschitz hypothesis exceeded", ratio=ratio, limit=limit)
    return LipschitzAudit(numerator=numerator, distances=distances, ratio=ratio, limit=limit, flagged=bool(flagged))


@dataclass
class MonotonicityAudit:
    pairs: int
    min_product: float
    violations: int


def monotonicity_audit(kernel: InteractionKernel, state: Sequence[Measure], species: int, points: np.ndarray,
                       tol: float = 1e-12) -> MonotonicityAudit:
    """(K(x) - K(y)) . (x - y) >= 0 over all pairs of audit points"""
    points = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, kernel.dim)
    values = eval_velocity(kernel, state, species, 0.0, points)
    dx = points[:, None, :] - points[None, :, :]
    dk = values[:, None, :] - values[None, :, :]
    products = np.sum(dx * dk, axis=-1)
    scale = np.maximum(np.sum(dx * dx, axis=-1), 1.0)
    normalized = products / scale
    violations = int(np.sum(normalized < -tol))
    if violations:
        logger.warning("Monotonicity violated", species=species, violations=violations)
    return MonotonicityAudit(pairs=int(points.shape[0] * (points.shape[0] - 1) // 2),
                             min_product=float(np.min(normalized)), violations=violations)
