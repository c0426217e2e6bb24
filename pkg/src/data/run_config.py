"""
Run configuration schema

A run is described by one JSON document: species with their initial data, the kernel
block, the forward solver block, the probe bank, certification horizons, an optional
frozen-field dual block and the output directory. The models validate the document;
the build_* helpers turn it into solver objects.
"""

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import structlog
from pydantic import BaseModel, Field, ValidationError, model_validator
from scipy import stats

from src.calculations.dual_solver import DualConfig
from src.calculations.primal_solver import PrimalConfig
from src.calculations.probes import (
    Probe,
    bump,
    clipped_distance,
    coordinate,
    default_probe_bank,
    hat,
    probe_by_name,
    smooth_step,
)
from src.calculations.velocity import InteractionKernel, Potential, VelocityField, drift_field
from src.core.errors import ConfigError
from src.core.measures import GridDensity, GridSpec, Measure, ParticleMeasure
from src.data.loaders import load_measure

logger = structlog.get_logger(__name__)


class GridModel(BaseModel):
    lower: list[float]
    upper: list[float]
    cells: list[int]

    def build(self) -> GridSpec:
        return GridSpec(tuple(self.lower), tuple(self.upper), tuple(self.cells))


class InitialModel(BaseModel):
    """
    Initial datum of one species

    dirac: `point`; uniform: box `lower`..`upper` with `count` atoms per axis;
    gaussian: `center`, `sigma`; atoms: rows [weight, x1(, x2)]; csv: `path`
    """
    kind: Literal["dirac", "uniform", "gaussian", "atoms", "csv"]
    point: list[float] = Field(default_factory=lambda: [0.0])
    lower: Optional[list[float]] = None
    upper: Optional[list[float]] = None
    count: int = Field(100, gt=0)
    center: list[float] = Field(default_factory=lambda: [0.0])
    sigma: float = Field(1.0, gt=0.0)
    atoms: list[list[float]] = Field(default_factory=list)
    path: Optional[str] = None


class SpeciesModel(BaseModel):
    name: str = "species"
    diffusion: float = Field(0.0, ge=0.0)
    initial: InitialModel


class PotentialModel(BaseModel):
    form: Literal["quadratic", "smoothed_newtonian", "gaussian", "tabulated_radial"]
    strength: float = 1.0
    k: float = 100.0
    sigma: float = 1.0
    radii: list[float] = Field(default_factory=list)
    derivatives: list[float] = Field(default_factory=list)

    def build(self) -> Potential:
        return Potential(self.form, self.strength, self.k, self.sigma, tuple(self.radii), tuple(self.derivatives))


class KernelModel(BaseModel):
    """
    Named potentials and an n x n matrix of names (null for no interaction)

    Without a matrix a single potential is applied between every pair of species;
    no potentials at all means K = 0.
    """
    potentials: dict[str, PotentialModel] = Field(default_factory=dict)
    matrix: Optional[list[list[Optional[str]]]] = None


class PicardModel(BaseModel):
    tol: Optional[float] = Field(None, gt=0.0)
    max_iter: Optional[int] = Field(None, gt=0)
    window: Optional[float] = Field(None, gt=0.0)


class SolverModel(BaseModel):
    representation: Literal["particle", "grid"] = "particle"
    horizon: float = Field(..., gt=0.0)
    grid: Optional[GridModel] = None
    integrator: Literal["rk4", "heun"] = "rk4"
    cfl: Optional[float] = Field(None, gt=0.0, le=1.0)
    time_step: Optional[float] = Field(None, gt=0.0)
    outputs: list[float] = Field(default_factory=list)
    method: Literal["picard", "direct"] = "direct"
    picard: PicardModel = Field(default_factory=PicardModel)


class ProbeModel(BaseModel):
    kind: Literal["coordinate", "clipped", "hat", "bump", "tanh"]
    center: list[float] = Field(default_factory=lambda: [0.0])
    radius: float = Field(1.0, gt=0.0)
    axis: int = Field(0, ge=0)


class ProbesModel(BaseModel):
    bank: Literal["default", "custom"] = "default"
    count: int = Field(8, gt=0)
    custom: list[ProbeModel] = Field(default_factory=list)


class CertifyModel(BaseModel):
    enabled: bool = True
    horizons: list[float] = Field(default_factory=list)
    boundary: Literal["neumann", "linear"] = "neumann"
    cells: Optional[int] = Field(None, ge=2, description="dual grid cells per axis for particle runs")


class DualModel(BaseModel):
    """
    Frozen-field dual solve

    field: constant (vector `value`), linear (E = value * x) or kernel (E = -K[mu0] of
    species `species`, frozen at the initial state)
    """
    field: Literal["constant", "linear", "kernel"] = "constant"
    value: Union[float, list[float]] = 0.0
    species: int = Field(0, ge=0)
    diffusion: float = Field(0.0, ge=0.0)
    horizon: Optional[float] = Field(None, gt=0.0)
    psi0: str = "x1"
    grid: Optional[GridModel] = None
    boundary: Literal["neumann", "linear"] = "neumann"
    snapshots: list[float] = Field(default_factory=list)
    weight_exponent: float = 1.0


class RunConfig(BaseModel):
    name: str = "run"
    dimension: Literal[1, 2] = 1
    species: list[SpeciesModel] = Field(..., min_length=1)
    kernel: KernelModel = Field(default_factory=KernelModel)
    solver: SolverModel
    probes: ProbesModel = Field(default_factory=ProbesModel)
    certify: CertifyModel = Field(default_factory=CertifyModel)
    dual: Optional[DualModel] = None
    output_dir: str = "runs"

    @model_validator(mode="after")
    def _consistent(self) -> "RunConfig":
        grids = [g for g in (self.solver.grid, self.dual.grid if self.dual else None) if g is not None]
        for grid in grids:
            if not (len(grid.lower) == len(grid.upper) == len(grid.cells) == self.dimension):
                raise ValueError(f"grid must have {self.dimension} entries per corner and cells")
        if self.solver.representation == "grid" and self.solver.grid is None:
            raise ValueError("grid representation needs solver.grid")
        n = len(self.species)
        if self.kernel.matrix is not None:
            if len(self.kernel.matrix) != n or any(len(row) != n for row in self.kernel.matrix):
                raise ValueError(f"kernel.matrix must be {n} x {n}")
            names = {name for row in self.kernel.matrix for name in row if name is not None}
            missing = names - set(self.kernel.potentials)
            if missing:
                raise ValueError(f"kernel.matrix names undefined potentials: {sorted(missing)}")
        elif len(self.kernel.potentials) > 1:
            raise ValueError("several potentials need an explicit kernel.matrix")
        if self.dual is not None and self.dual.species >= n:
            raise ValueError(f"dual.species {self.dual.species} out of range")
        return self


def load_run_config(filepath: Union[str, Path]) -> RunConfig:
    path = Path(filepath)
    if not path.exists():
        raise ConfigError(f"Run config not found: {path}")
    return parse_run_config(path.read_text())


def parse_run_config(text: str) -> RunConfig:
    try:
        return RunConfig.model_validate_json(text)
    except ValidationError as e:
        raise ConfigError(f"Invalid run config: {e}")


def config_hash(config: RunConfig) -> str:
    """sha256 of the canonical JSON form"""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def build_kernel(config: RunConfig) -> InteractionKernel:
    potentials = {name: spec.build() for name, spec in config.kernel.potentials.items()}
    n = len(config.species)
    if config.kernel.matrix is not None:
        matrix = tuple(tuple(potentials[name] if name else None for name in row) for row in config.kernel.matrix)
        return InteractionKernel(config.dimension, matrix)
    if not potentials:
        return InteractionKernel.zero(n, config.dimension)
    only = next(iter(potentials.values()))
    return InteractionKernel(config.dimension, tuple((only,) * n for _ in range(n)))


def _uniform_atoms(lower: np.ndarray, upper: np.ndarray, count: int) -> ParticleMeasure:
    axes = [lo + (np.arange(count) + 0.5) * (hi - lo) / count for lo, hi in zip(lower, upper)]
    points = np.stack([a.reshape(-1) for a in np.meshgrid(*axes, indexing="ij")], axis=-1)
    return ParticleMeasure.normalized(np.ones(points.shape[0]), points)


def _gaussian_atoms(center: np.ndarray, sigma: float, count: int) -> ParticleMeasure:
    # equal-weight atoms at the midpoint quantiles
    levels = (np.arange(count) + 0.5) / count
    return ParticleMeasure.normalized(np.ones(count), center[0] + sigma * stats.norm.ppf(levels))


def build_initial(initial: InitialModel, dim: int, representation: str, grid: Optional[GridSpec],
                  base_dir: Optional[Path] = None) -> Measure:
    """
    Build one initial measure in the run's representation

    Raises:
        ConfigError: the datum does not fit the dimension or representation
    """
    def as_point(values: list[float], label: str) -> np.ndarray:
        point = np.asarray(values, dtype=float)
        if point.size != dim:
            raise ConfigError(f"initial.{label} needs {dim} coordinates, got {point.size}")
        return point

    if initial.kind == "csv":
        if initial.path is None:
            raise ConfigError("csv initial data needs a path")
        path = Path(initial.path)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        measure = load_measure(path)
    elif initial.kind == "dirac":
        measure = ParticleMeasure.dirac(as_point(initial.point, "point"))
    elif initial.kind == "atoms":
        rows = np.asarray(initial.atoms, dtype=float)
        if rows.ndim != 2 or rows.shape[0] == 0 or rows.shape[1] != dim + 1:
            raise ConfigError(f"atoms rows must be [weight, x1{', x2' if dim == 2 else ''}]")
        measure = ParticleMeasure(rows[:, 0], rows[:, 1:])
    elif initial.kind == "uniform":
        if initial.lower is None or initial.upper is None:
            raise ConfigError("uniform initial data needs lower and upper")
        lower, upper = as_point(initial.lower, "lower"), as_point(initial.upper, "upper")
        if representation == "grid":
            def inside(x: np.ndarray) -> np.ndarray:
                return np.all((x >= lower) & (x <= upper), axis=-1).astype(float)

            return GridDensity.from_function(grid, inside)
        measure = _uniform_atoms(lower, upper, initial.count)
    else:
        center = as_point(initial.center, "center")
        if representation == "grid":
            return GridDensity.from_function(
                grid, lambda x: np.exp(-np.sum((x - center) ** 2, axis=-1) / (2.0 * initial.sigma**2)))
        if dim != 1:
            raise ConfigError("Gaussian particle data is 1D only; use the grid representation")
        measure = _gaussian_atoms(center, initial.sigma, initial.count)

    if measure.dim != dim:
        raise ConfigError(f"Initial datum is {measure.dim}D in a {dim}D run")
    if representation == "grid" and isinstance(measure, ParticleMeasure):
        return measure.to_grid(grid)
    if representation == "particle" and isinstance(measure, GridDensity):
        return measure.to_particles()
    return measure


def build_initial_state(config: RunConfig, base_dir: Optional[Path] = None) -> list[Measure]:
    grid = config.solver.grid.build() if config.solver.grid else None
    return [build_initial(s.initial, config.dimension, config.solver.representation, grid, base_dir)
            for s in config.species]


def build_primal_config(config: RunConfig) -> PrimalConfig:
    solver = config.solver
    kwargs = {}
    if solver.cfl is not None:
        kwargs["cfl"] = solver.cfl
    return PrimalConfig(
        horizon=solver.horizon,
        diffusion=tuple(s.diffusion for s in config.species),
        representation=solver.representation,
        grid=solver.grid.build() if solver.grid else None,
        integrator=solver.integrator,
        n_species=len(config.species),
        time_step=solver.time_step,
        outputs=tuple(solver.outputs),
        **kwargs,
    )


def build_probe(spec: ProbeModel, dim: int) -> Probe:
    if spec.kind == "coordinate":
        if spec.axis >= dim:
            raise ConfigError(f"Probe axis {spec.axis} out of range for a {dim}D run")
        return coordinate(spec.axis)
    if len(spec.center) != dim:
        raise ConfigError(f"Probe center needs {dim} coordinates")
    if spec.kind == "tanh":
        return smooth_step(spec.center, axis=spec.axis)
    builders = {"clipped": clipped_distance, "hat": hat, "bump": bump}
    return builders[spec.kind](spec.center, spec.radius)


def build_probes(config: RunConfig, grid: GridSpec) -> list[Probe]:
    if config.probes.bank == "custom":
        if not config.probes.custom:
            raise ConfigError("custom probe bank is empty")
        return [build_probe(spec, config.dimension) for spec in config.probes.custom]
    return default_probe_bank(grid, config.probes.count)


def build_dual(config: RunConfig, base_dir: Optional[Path] = None) -> tuple[DualConfig, VelocityField, Probe]:
    """
    DualConfig, frozen field and initial probe of the run's dual block

    Raises:
        ConfigError: no dual block, or no grid for the dual solve
    """
    dual = config.dual
    if dual is None:
        raise ConfigError("Run config has no dual block")
    grid_model = dual.grid or config.solver.grid
    if grid_model is None:
        raise ConfigError("Dual solve needs dual.grid or solver.grid")
    grid = grid_model.build()
    dim = config.dimension
    if dual.field == "constant":
        field = VelocityField.constant(dual.value, dim)
    elif dual.field == "linear":
        if not isinstance(dual.value, (int, float)):
            raise ConfigError("linear dual field takes a scalar rate")
        field = VelocityField.linear(float(dual.value), dim)
    else:
        field = drift_field(build_kernel(config), build_initial_state(config, base_dir), dual.species)
    dual_config = DualConfig(
        horizon=dual.horizon or config.solver.horizon,
        grid=grid,
        diffusion=dual.diffusion,
        boundary=dual.boundary,
        snapshot_times=tuple(dual.snapshots),
        weight_exponent=dual.weight_exponent,
    )
    probe = probe_by_name(dual.psi0, grid, default_probe_bank(grid, config.probes.count))
    logger.debug("Dual block built", field=field.label, psi0=probe.name, cells=grid.cells)
    return dual_config, field, probe
