"""
Forward solver for d/dt mu^i = -div(E^i mu^i) + D^i Laplace mu^i

Particle runs push atoms along dX/dt = E(X) with RK4 or Heun (D = 0 only). Grid runs use
the conservative upwind flux of grid_ops with explicit centered diffusion; mass that
leaves the box is kept in the GridDensity outflux ledger. Coupled runs recompute
E = -K[mu_t] at every step, frozen runs take E as given.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd
import structlog
from scipy import stats

from src.calculations.grid_ops import primal_step, stable_step
from src.calculations.metrics import d1
from src.calculations.velocity import InteractionKernel, StateDriftField, VelocityField, eval_velocity
from src.config import get_settings
from src.core.errors import ConfigError, DimensionError, SizeError, SolverError
from src.core.measures import GridDensity, GridSpec, Measure, ParticleMeasure

logger = structlog.get_logger(__name__)

REPRESENTATIONS = ("particle", "grid")
INTEGRATORS = ("rk4", "heun")
TIME_EPS = 1e-12
DEFAULT_PARTICLE_STEP = 0.01
NEGATIVE_TOL = 1e-13


@dataclass
class PrimalConfig:
    """
    Forward run configuration

    Attributes:
        horizon: final time T
        diffusion: D per species (a scalar applies to every species)
        representation: 'particle' or 'grid'
        grid: box grid, required for grid runs
        integrator: 'rk4' or 'heun' for particle runs
        cfl: safety factor in (0, 1]
        n_species: number of species
        time_step: fixed step; grid runs reject steps above the CFL bound
        outputs: output times (0 and T are always included), default 10 even intervals
    """

    horizon: float
    diffusion: Union[float, Sequence[float]] = 0.0
    representation: str = "particle"
    grid: Optional[GridSpec] = None
    integrator: str = "rk4"
    cfl: float = field(default_factory=lambda: get_settings().cfl)
    n_species: int = 1
    time_step: Optional[float] = None
    outputs: Sequence[float] = ()

    def __post_init__(self):
        if self.horizon <= 0:
            raise ConfigError(f"Horizon must be positive, got {self.horizon}")
        if self.representation not in REPRESENTATIONS:
            raise ConfigError(f"Unknown representation '{self.representation}'")
        if self.integrator not in INTEGRATORS:
            raise ConfigError(f"Unknown integrator '{self.integrator}'")
        if not 0.0 < self.cfl <= 1.0:
            raise ConfigError(f"CFL factor must lie in (0, 1], got {self.cfl}")
        if self.n_species < 1:
            raise ConfigError("Need at least one species")
        diffusion = np.broadcast_to(np.asarray(self.diffusion, dtype=float), (self.n_species,))
        if np.any(diffusion < 0):
            raise ConfigError("Diffusion coefficients must be nonnegative")
        self.diffusion = tuple(float(v) for v in diffusion)
        if self.representation == "particle" and any(v > 0 for v in self.diffusion):
            raise ConfigError("Particle representation needs D = 0 for every species")
        if self.representation == "grid" and self.grid is None:
            raise ConfigError("Grid representation needs a grid")
        if self.time_step is not None and self.time_step <= 0:
            raise ConfigError("Fixed time step must be positive")
        outputs = list(self.outputs) or list(np.linspace(0.0, self.horizon, 11))
        times = sorted({0.0, float(self.horizon), *(float(t) for t in outputs)})
        if times[0] < 0 or times[-1] > self.horizon + TIME_EPS:
            raise ConfigError(f"Output times must lie in [0, {self.horizon}]")
        self.outputs = tuple(times)


@dataclass
class Trajectory:
    """
    Output times and per-species states; states[k][i] is species i at times[k]

    `max_step` is the largest solver step taken; `diffusion` the per-species D of the run.
    """

    times: list[float]
    states: list[list[Measure]]
    representation: str
    diffusion: tuple[float, ...]
    max_step: float = 0.0

    @property
    def n_species(self) -> int:
        return len(self.states[0])

    @property
    def horizon(self) -> float:
        return self.times[-1]

    @property
    def initial(self) -> list[Measure]:
        return self.states[0]

    @property
    def final(self) -> list[Measure]:
        return self.states[-1]

    def index(self, t: float) -> int:
        for k, time in enumerate(self.times):
            if abs(time - t) <= 1e-9 * max(1.0, self.horizon):
                return k
        raise ConfigError(f"No output at t={t}; available {self.times}")

    def at(self, t: float) -> list[Measure]:
        return self.states[self.index(t)]

    def species(self, i: int) -> list[Measure]:
        return [state[i] for state in self.states]

    @property
    def grid(self) -> Optional[GridSpec]:
        first = self.states[0][0]
        return first.grid if isinstance(first, GridDensity) else None

    def mass_ledger(self) -> pd.DataFrame:
        """Mass inside the box and cumulative outflux per species and output time"""
        rows = []
        for t, state in zip(self.times, self.states):
            for i, measure in enumerate(state):
                if isinstance(measure, GridDensity):
                    rows.append({"t": t, "species": i, "mass": measure.mass, "outflux": measure.outflux})
                else:
                    rows.append({"t": t, "species": i, "mass": float(measure.weights.sum()), "outflux": 0.0})
        return pd.DataFrame(rows)

    def shifted(self, t0: float) -> "Trajectory":
        return replace(self, times=[t + t0 for t in self.times])


def _check_initial(config: PrimalConfig, mu0: Sequence[Measure], kind: type) -> list:
    mu0 = list(mu0)
    if len(mu0) != config.n_species:
        raise DimensionError(f"{len(mu0)} initial measures for {config.n_species} species")
    for measure in mu0:
        if not isinstance(measure, kind):
            raise ConfigError(f"{config.representation} run needs {kind.__name__} initial data")
    dims = {m.dim for m in mu0}
    if len(dims) != 1:
        raise DimensionError(f"Species live in different dimensions {dims}")
    return mu0


# ---------------------------------------------------------------------------
# Particles
# ---------------------------------------------------------------------------

ParticleDrift = Callable[[int, float, list[ParticleMeasure]], np.ndarray]


def _particle_step(config: PrimalConfig, drift: ParticleDrift, state: list[ParticleMeasure], t: float,
                   h: float) -> list[ParticleMeasure]:
    def rates(time: float, measures: list[ParticleMeasure]) -> list[np.ndarray]:
        return [drift(i, time, measures) for i in range(len(measures))]

    def moved(base: list[ParticleMeasure], slopes: list[np.ndarray], scale: float) -> list[ParticleMeasure]:
        return [m.with_positions(m.positions + scale * k) for m, k in zip(base, slopes)]

    k1 = rates(t, state)
    if config.integrator == "heun":
        k2 = rates(t + h, moved(state, k1, h))
        return [m.with_positions(m.positions + 0.5 * h * (a + b)) for m, a, b in zip(state, k1, k2)]
    k2 = rates(t + 0.5 * h, moved(state, k1, 0.5 * h))
    k3 = rates(t + 0.5 * h, moved(state, k2, 0.5 * h))
    k4 = rates(t + h, moved(state, k3, h))
    return [m.with_positions(m.positions + h / 6.0 * (a + 2 * b + 2 * c + d))
            for m, a, b, c, d in zip(state, k1, k2, k3, k4)]


def _particle_run(config: PrimalConfig, mu0: Sequence[ParticleMeasure], drift: ParticleDrift,
                  step: float) -> Trajectory:
    state = list(mu0)
    times = [0.0]
    states = [state]
    largest = 0.0
    for t0, t1 in zip(config.outputs[:-1], config.outputs[1:]):
        count = max(1, int(np.ceil((t1 - t0) / step - 1e-9)))
        h = (t1 - t0) / count
        largest = max(largest, h)
        for k in range(count):
            state = _particle_step(config, drift, state, t0 + k * h, h)
        times.append(t1)
        states.append(state)
    return Trajectory(times=times, states=states, representation="particle", diffusion=config.diffusion,
                      max_step=largest)


def _particle_step_size(config: PrimalConfig, lipschitz: float) -> float:
    if config.time_step is not None:
        return config.time_step
    if lipschitz <= 0:
        return DEFAULT_PARTICLE_STEP
    return min(DEFAULT_PARTICLE_STEP, config.cfl / lipschitz)


def solve_particles(config: PrimalConfig, kernel: InteractionKernel, mu0: Sequence[ParticleMeasure]) -> Trajectory:
    """
    Coupled particle flow dX^i/dt = -K^i[mu_t](X^i) with constant weights

    Args:
        config: PrimalConfig with representation 'particle'
        kernel: interaction kernel
        mu0: initial atoms per species

    Returns:
        Trajectory of ParticleMeasure at the output times

    Raises:
        ConfigError: D > 0 or a grid config
        SizeError: more atoms than the particle budget
    """
    if config.representation != "particle":
        raise ConfigError("solve_particles needs a particle config")
    mu0 = _check_initial(config, mu0, ParticleMeasure)
    if kernel.n_species != config.n_species:
        raise DimensionError(f"Kernel has {kernel.n_species} species, config {config.n_species}")
    budget = get_settings().particle_budget
    atoms = sum(m.size for m in mu0)
    if atoms > budget:
        raise SizeError(f"{atoms} atoms exceed the particle budget {budget}")

    def drift(i: int, t: float, measures: list[ParticleMeasure]) -> np.ndarray:
        return -eval_velocity(kernel, measures, i, t, measures[i].positions)

    step = _particle_step_size(config, kernel.lipschitz_bound())
    trajectory = _particle_run(config, mu0, drift, step)
    logger.info("Particle run finished", atoms=atoms, horizon=config.horizon, step=trajectory.max_step,
                integrator=config.integrator)
    return trajectory


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------

FaceProvider = Callable[[int, float, list[GridDensity]], list[np.ndarray]]


def _grid_run(config: PrimalConfig, mu0: Sequence[GridDensity], faces_for: FaceProvider) -> Trajectory:
    grid = config.grid
    for measure in mu0:
        if measure.grid != grid:
            raise ConfigError("Initial densities must live on the configured grid")
    state = list(mu0)
    times = [0.0]
    states = [state]
    largest = 0.0
    steps = 0
    max_steps = get_settings().max_steps
    t = 0.0
    for target in config.outputs[1:]:
        while t < target - TIME_EPS * max(1.0, config.horizon):
            faces = [faces_for(i, t, state) for i in range(len(state))]
            limit = min(stable_step(f, grid, d, 1.0) for f, d in zip(faces, config.diffusion))
            if config.time_step is not None:
                if config.time_step > config.cfl * limit * (1.0 + 1e-12):
                    raise ConfigError(f"Fixed step {config.time_step} exceeds CFL bound {config.cfl * limit:.3e}")
                dt = config.time_step
            else:
                dt = config.cfl * limit
            dt = min(dt, target - t)
            updated = []
            for measure, face, diffusion in zip(state, faces, config.diffusion):
                values, outflux = primal_step(measure.values, face, grid, diffusion, dt)
                floor = float(values.min())
                if floor < -NEGATIVE_TOL * max(1.0, float(measure.values.max())):
                    raise SolverError(f"Negative density {floor:.3e} at t={t:.6g}")
                values = np.maximum(values, 0.0)
                updated.append(_rebalanced(grid, values, measure.outflux + outflux))
            state = updated
            largest = max(largest, dt)
            t = t + dt
            steps += 1
            if steps > max_steps:
                raise SolverError(f"Grid run exceeded {max_steps} steps at t={t:.6g}")
        t = target
        times.append(target)
        states.append(state)
    logger.info("Grid run finished", steps=steps, cells=grid.cells, horizon=config.horizon,
                outflux=[m.outflux for m in state])
    return Trajectory(times=times, states=states, representation="grid", diffusion=config.diffusion,
                      max_step=largest)


def _rebalanced(grid: GridSpec, values: np.ndarray, outflux: float) -> GridDensity:
    """Absorb round-off drift of the mass ledger into the outflux entry"""
    mass = float(values.sum() * grid.cell_volume)
    return GridDensity(grid, values, min(max(1.0 - mass, 0.0), 1.0) if outflux > 0 else outflux)


def solve_grid(config: PrimalConfig, kernel: Union[InteractionKernel, VelocityField, Sequence[VelocityField]],
               mu0: Sequence[GridDensity]) -> Trajectory:
    """
    Grid run with the coupled field E = -K[mu_t] refreshed every step, or a frozen field

    Args:
        config: PrimalConfig with representation 'grid'
        kernel: interaction kernel (coupled) or velocity field(s) (frozen, one per species)
        mu0: unit-mass densities on config.grid

    Raises:
        SolverError: negative cell after an update
        ConfigError: fixed step above the CFL bound
    """
    if config.representation != "grid":
        raise ConfigError("solve_grid needs a grid config")
    mu0 = _check_initial(config, mu0, GridDensity)
    if not isinstance(kernel, InteractionKernel):
        return frozen_field_flow(config, kernel, mu0)
    if kernel.n_species != config.n_species:
        raise DimensionError(f"Kernel has {kernel.n_species} species, config {config.n_species}")
    grid = config.grid

    def faces_for(i: int, t: float, state: list[GridDensity]) -> list[np.ndarray]:
        if kernel.is_zero:
            return [np.zeros(grid.faces(a).shape[:-1]) for a in range(grid.dim)]
        return StateDriftField(kernel, state, i).on_faces(t, grid)

    return _grid_run(config, mu0, faces_for)


def _as_fields(fields: Union[VelocityField, Sequence[VelocityField]], n_species: int) -> list[VelocityField]:
    if isinstance(fields, VelocityField):
        return [fields] * n_species
    fields = list(fields)
    if len(fields) != n_species:
        raise DimensionError(f"{len(fields)} fields for {n_species} species")
    return fields


def frozen_field_flow(config: PrimalConfig, fields: Union[VelocityField, Sequence[VelocityField]],
                      mu0: Sequence[Measure]) -> Trajectory:
    """
    Linear flow with a given drift E^i_t, same numerics as the coupled solvers

    Args:
        config: PrimalConfig
        fields: one VelocityField shared by every species, or one per species
        mu0: initial measures matching the representation
    """
    fields = _as_fields(fields, config.n_species)
    if config.representation == "particle":
        mu0 = _check_initial(config, mu0, ParticleMeasure)

        def drift(i: int, t: float, measures: list[ParticleMeasure]) -> np.ndarray:
            return fields[i](t, measures[i].positions)

        # step from recorded Lip0 audits when there are any
        lipschitz = max((record.grad_sup for f in fields for record in f.lip0.values()), default=0.0)
        return _particle_run(config, mu0, drift, _particle_step_size(config, lipschitz))

    mu0 = _check_initial(config, mu0, GridDensity)
    return _grid_run(config, mu0, lambda i, t, state: fields[i].on_faces(t, config.grid))


def solve(config: PrimalConfig, kernel: InteractionKernel, mu0: Sequence[Measure]) -> Trajectory:
    """Coupled run in the configured representation"""
    if config.representation == "particle":
        return solve_particles(config, kernel, mu0)
    return solve_grid(config, kernel, mu0)


# ---------------------------------------------------------------------------
# Oracles and checks
# ---------------------------------------------------------------------------

def heat_kernel_density(grid: GridSpec, sigma0_sq: float, diffusion: float, t: float,
                        center: Union[float, Sequence[float]] = 0.0) -> GridDensity:
    """
    Cell averages of the Gaussian with variance sigma0^2 + 2 D t, renormalized to the box

    A Gaussian initial datum stays Gaussian under pure diffusion, which makes this the
    exact profile for K = 0 runs.
    """
    variance = sigma0_sq + 2.0 * diffusion * t
    if variance <= 0:
        raise ConfigError("Heat profile needs positive variance")
    center = np.broadcast_to(np.asarray(center, dtype=float), (grid.dim,))
    masses = np.ones(grid.shape)
    for axis in range(grid.dim):
        cdf = stats.norm.cdf(grid.axis_edges(axis), loc=center[axis], scale=np.sqrt(variance))
        shape = [1] * grid.dim
        shape[axis] = grid.cells[axis]
        masses = masses * np.diff(cdf).reshape(shape)
    return GridDensity.from_masses(grid, masses / masses.sum())


def refine_density(density: GridDensity, factor: int) -> GridDensity:
    """The same measure on a grid with `factor` times the cells (mass split evenly)"""
    values = density.values
    for axis in range(density.dim):
        values = np.repeat(values, factor, axis=axis)
    grid = GridSpec(density.grid.lower, density.grid.upper, tuple(n * factor for n in density.grid.cells))
    return GridDensity(grid, values, density.outflux)


@dataclass
class SemigroupDefect:
    t_split: float
    horizon: float
    defect: float
    per_species: list[float]


def comparable(measure: Measure) -> Measure:
    """Renormalize grid densities that lost mass through the walls so d1 applies"""
    if isinstance(measure, GridDensity) and measure.outflux > 0:
        return measure.renormalized()
    return measure


def split_configs(config: PrimalConfig, t_split: float) -> tuple[PrimalConfig, PrimalConfig, PrimalConfig]:
    """
    Direct run over [0, T] and the two legs of the split run

    The direct run only outputs at 0 and T so that its steps are not forced onto t_split.
    """
    if not 0.0 < t_split < config.horizon:
        raise ConfigError(f"Split time must lie in (0, {config.horizon}), got {t_split}")
    full = replace(config, outputs=(0.0, config.horizon))
    first = replace(config, horizon=t_split, outputs=(0.0, t_split))
    rest = config.horizon - t_split
    second = replace(config, horizon=rest, outputs=(0.0, rest))
    return full, first, second


def semigroup_defect(config: PrimalConfig, fields: Union[VelocityField, Sequence[VelocityField]],
                     mu0: Sequence[Measure], t_split: float) -> SemigroupDefect:
    """
    d1(S_T[mu0, E], S_{T-t}[S_t[mu0, E], E(t + .)]) for a frozen field

    Raises:
        ConfigError: split time outside (0, T)
    """
    fields = _as_fields(fields, config.n_species)
    full, first, second = split_configs(config, t_split)
    direct = frozen_field_flow(full, fields, mu0).final
    middle = frozen_field_flow(first, fields, mu0).final
    composed = frozen_field_flow(second, [f.shifted(t_split) for f in fields], middle).final
    per_species = [d1(comparable(a), comparable(b)) for a, b in zip(direct, composed)]
    return SemigroupDefect(t_split=t_split, horizon=config.horizon, defect=max(per_species),
                           per_species=per_species)
