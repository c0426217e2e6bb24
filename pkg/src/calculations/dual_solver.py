"""
Backward dual problem solver

Solves d/ds psi = E_{T-s} . grad psi + D Laplace psi on a box grid with first-order
monotone upwind transport and explicit centered diffusion, and audits the a priori
estimates of the viscosity solution (sup norm, gradient growth, weighted growth, time
modulus, continuous dependence on E, L2 gradient bounds).
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd
import structlog
from scipy.integrate import trapezoid

from src.calculations.grid_ops import (
    BOUNDARY_MODES,
    dual_step,
    field_gradient_sup,
    l2_gradient,
    lipschitz_constant,
    stable_step,
    weighted_sup,
)
from src.calculations.velocity import VelocityField
from src.config import get_settings
from src.core.errors import ConfigError, SolverError, UnsupportedError
from src.core.measures import GridSpec, Measure, integrate, interpolate_on_grid

logger = structlog.get_logger(__name__)

TIME_EPS = 1e-12


@dataclass
class DualConfig:
    """
    Dual solve configuration

    Attributes:
        horizon: T, the dual runs over s in [0, T] with E evaluated at T - s
        grid: solver grid (psi lives at cell centers)
        diffusion: D >= 0
        cfl: safety factor in (0, 1]
        weight_exponent: p in eta = (1 + |x|^2)^(p/2)
        boundary: 'neumann' (monotone, default) or 'linear' ghost cells
        snapshot_times: s values kept in the solution (0 and T always kept)
        time_step: optional fixed step, rejected when it violates the CFL bound
        normalize_origin: subtract psi0(0) before solving
    """

    horizon: float
    grid: GridSpec
    diffusion: float = 0.0
    cfl: float = field(default_factory=lambda: get_settings().cfl)
    weight_exponent: float = 1.0
    boundary: str = "neumann"
    snapshot_times: Sequence[float] = ()
    time_step: Optional[float] = None
    normalize_origin: bool = False
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.horizon <= 0:
            raise ConfigError(f"Dual horizon must be positive, got {self.horizon}")
        if self.diffusion < 0:
            raise ConfigError(f"Diffusion must be nonnegative, got {self.diffusion}")
        if not 0.0 < self.cfl <= 1.0:
            raise ConfigError(f"CFL factor must lie in (0, 1], got {self.cfl}")
        if self.boundary not in BOUNDARY_MODES:
            raise ConfigError(f"Unknown boundary mode '{self.boundary}'")
        if self.time_step is not None and self.time_step <= 0:
            raise ConfigError("Fixed time step must be positive")
        times = sorted({0.0, float(self.horizon), *(float(s) for s in self.snapshot_times)})
        if times[0] < 0 or times[-1] > self.horizon + TIME_EPS:
            raise ConfigError(f"Snapshot times must lie in [0, {self.horizon}]")
        self.snapshot_times = tuple(times)

    def eta(self) -> np.ndarray:
        radius_sq = np.sum(self.grid.centers() ** 2, axis=-1)
        return (1.0 + radius_sq) ** (0.5 * self.weight_exponent)


@dataclass
class DualSolution:
    """
    psi_s on the grid at the snapshot times plus the per-step audit trail

    `history` has one row per solver time level: s, ds (step taken from that level),
    sup norm, min/max, discrete Lipschitz constant, weighted norms, L2 gradient norm and
    the field norms on the step that starts at s, with their running integrals.
    """

    config: DualConfig
    psi0: np.ndarray
    descriptor: str
    snapshots: dict[float, np.ndarray]
    history: pd.DataFrame
    max_principle_violation: float = 0.0
    field_label: str = ""

    @property
    def grid(self) -> GridSpec:
        return self.config.grid

    @property
    def times(self) -> list[float]:
        return sorted(self.snapshots)

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[self.times[-1]]

    def at(self, s: float) -> np.ndarray:
        for key in self.snapshots:
            if abs(key - s) <= 1e-9 * max(1.0, self.config.horizon):
                return self.snapshots[key]
        raise ConfigError(f"No snapshot at s={s}; available {self.times}")

    def integrate(self, measure: Measure, s: Optional[float] = None) -> float:
        """int psi_s dmu with the measure's native quadrature"""
        psi = self.final if s is None else self.at(s)
        return integrate(measure, psi, self.grid)

    def evaluate(self, points: np.ndarray, s: Optional[float] = None) -> np.ndarray:
        psi = self.final if s is None else self.at(s)
        return interpolate_on_grid(self.grid, psi, points)

    def to_frame(self, s: Optional[float] = None) -> pd.DataFrame:
        """Snapshot as a table of cell centers and values"""
        psi = self.final if s is None else self.at(s)
        centers = self.grid.centers().reshape(-1, self.grid.dim)
        data = {f"x{a + 1}": centers[:, a] for a in range(self.grid.dim)}
        data["psi"] = psi.reshape(-1)
        return pd.DataFrame(data)


def _sample_psi0(grid: GridSpec, psi0: Union[np.ndarray, Callable]) -> np.ndarray:
    if callable(psi0):
        centers = grid.centers()
        values = np.asarray(psi0(centers.reshape(-1, grid.dim)), dtype=float).reshape(grid.shape)
    else:
        values = np.array(psi0, dtype=float)
        if values.shape != grid.shape:
            raise ConfigError(f"psi0 has shape {values.shape}, grid expects {grid.shape}")
    if not np.all(np.isfinite(values)):
        raise ConfigError("psi0 must be finite on the grid")
    return values


def solve_dual(config: DualConfig, field: VelocityField, psi0: Union[np.ndarray, Callable],
               descriptor: Optional[str] = None) -> DualSolution:
    """
    Advance psi from s = 0 to s = T

    Args:
        config: DualConfig
        field: drift E_t; the step starting at s uses E_{T-s}
        psi0: samples at cell centers or a callable on points (n, dim)
        descriptor: label of the initial datum for reports

    Returns:
        DualSolution with the requested snapshots and the audit history

    Raises:
        ConfigError: fixed step above the CFL bound, bad psi0
        KernelEvalError: non-finite field values
    """
    grid = config.grid
    if field.dim != grid.dim:
        raise ConfigError(f"Field dim {field.dim} does not match grid dim {grid.dim}")
    psi = _sample_psi0(grid, psi0)
    if config.normalize_origin:
        psi = psi - float(interpolate_on_grid(grid, psi, np.zeros((1, grid.dim)))[0])
    psi_initial = psi.copy()
    low, high = float(psi.min()), float(psi.max())
    monotone = config.boundary == "neumann"
    eta = config.eta()
    max_steps = config.max_steps or get_settings().max_steps

    targets = list(config.snapshot_times)
    snapshots = {0.0: psi.copy()}
    next_target = 1
    rows = []
    violation = 0.0
    s = 0.0
    steps = 0

    def record(s_value: float, ds: float, values: np.ndarray, stats: tuple[float, float, float]):
        rows.append({
            "s": s_value,
            "ds": ds,
            "sup_norm": float(np.max(np.abs(values))),
            "psi_min": float(values.min()),
            "psi_max": float(values.max()),
            "lipschitz": lipschitz_constant(values, grid),
            "weighted": weighted_sup(values, grid),
            "weighted_eta": float(np.max(np.abs(values) / eta)),
            "l2_gradient": l2_gradient(values, grid),
            "field_grad": stats[0],
            "field_weighted": stats[1],
            "field_sup": stats[2],
        })

    horizon = config.horizon
    while s < horizon - TIME_EPS * max(1.0, horizon):
        t = horizon - s
        faces = field.on_faces(t, grid)
        centers = field.on_centers(t, grid)
        stats = (field_gradient_sup(centers, grid), weighted_sup(centers, grid),
                 float(np.max(np.linalg.norm(centers, axis=-1))))
        limit = stable_step(faces, grid, config.diffusion, 1.0)
        if config.time_step is not None:
            if config.time_step > config.cfl * limit * (1.0 + 1e-12):
                raise ConfigError(f"Fixed dual step {config.time_step} exceeds CFL bound {config.cfl * limit:.3e}")
            ds = config.time_step
        else:
            ds = config.cfl * limit
        ds = min(ds, targets[next_target] - s)
        record(s, ds, psi, stats)
        psi = dual_step(psi, faces, grid, config.diffusion, ds, config.boundary)
        s = s + ds
        steps += 1
        if monotone:
            violation = max(violation, low - float(psi.min()), float(psi.max()) - high)
        if abs(s - targets[next_target]) <= TIME_EPS * max(1.0, horizon):
            s = targets[next_target]
            snapshots[s] = psi.copy()
            next_target += 1
        if steps > max_steps:
            raise SolverError(f"Dual solve exceeded {max_steps} steps at s={s:.6g}")
    record(s, 0.0, psi, (0.0, 0.0, 0.0))

    history = pd.DataFrame(rows)
    for column in ("field_grad", "field_weighted", "field_sup"):
        increments = (history[column] * history["ds"]).to_numpy()
        history[f"int_{column}"] = np.concatenate([[0.0], np.cumsum(increments)[:-1]])
    violation = max(violation, 0.0)
    if monotone and violation > 1e-12:
        logger.warning("Discrete maximum principle violated", violation=violation)
    logger.info("Dual solve finished", field=field.label, horizon=horizon, diffusion=config.diffusion,
                steps=steps, cells=grid.cells)
    return DualSolution(
        config=config,
        psi0=psi_initial,
        descriptor=descriptor or getattr(psi0, "name", None) or getattr(psi0, "__name__", "psi0"),
        snapshots=snapshots,
        history=history,
        max_principle_violation=violation,
        field_label=field.label,
    )


# ---------------------------------------------------------------------------
# Audits
# ---------------------------------------------------------------------------

@dataclass
class MaxPrincipleAudit:
    violation: float
    sup_growth: float
    nonnegative_preserved: Optional[bool]
    flagged: bool


def audit_maximum_principle(solution: DualSolution, tol: float = 1e-12) -> MaxPrincipleAudit:
    """min psi0 <= psi_s <= max psi0 and ||psi_s|| <= ||psi0|| over every recorded level"""
    history = solution.history
    sup0 = float(np.max(np.abs(solution.psi0)))
    growth = float(history["sup_norm"].max() - sup0)
    nonneg = None
    if solution.psi0.min() >= 0:
        nonneg = bool(history["psi_min"].min() >= -tol)
    violation = max(solution.max_principle_violation, growth, 0.0)
    flagged = violation > tol or nonneg is False
    return MaxPrincipleAudit(violation=violation, sup_growth=growth, nonnegative_preserved=nonneg,
                             flagged=bool(flagged))


@dataclass
class GradientBoundAudit:
    constant: float
    ratios: np.ndarray
    max_ratio: float
    growth: float
    flagged: bool


def audit_gradient_bound(solution: DualSolution, constant: Optional[float] = None) -> GradientBoundAudit:
    """
    max_s |||grad psi_s||| / (|||grad psi_0||| exp(C int_0^s ||grad E||))

    The field norms are the ones recorded on each solver step.
    """
    settings = get_settings()
    constant = settings.dimensional(settings.gradient_constant, solution.grid.dim) if constant is None else constant
    history = solution.history
    lip = history["lipschitz"].to_numpy()
    lip0 = lip[0]
    if lip0 == 0.0:
        ratios = np.where(lip > 0, np.inf, 0.0)
        growth = 0.0 if np.all(lip == 0) else np.inf
    else:
        ratios = lip / (lip0 * np.exp(constant * history["int_field_grad"].to_numpy()))
        growth = float(lip.max() / lip0)
    max_ratio = float(ratios.max())
    flagged = max_ratio > 1.0 + settings.audit_slack
    if flagged:
        logger.warning("Gradient bound exceeded", max_ratio=max_ratio, constant=constant)
    return GradientBoundAudit(constant=constant, ratios=ratios, max_ratio=max_ratio, growth=growth,
                              flagged=bool(flagged))


@dataclass
class WeightedBoundAudit:
    constant: float
    max_ratio: float
    time_constant: float
    measured_time_constant: float
    observed_order: Optional[float]
    sqrt_term_expected: bool
    flagged: bool
    modulus: pd.DataFrame


def _observed_order(s: np.ndarray, values: np.ndarray) -> Optional[float]:
    keep = (s > 0) & (values > 0)
    if np.count_nonzero(keep) < 2:
        return None
    slope, _ = np.polyfit(np.log(s[keep]), np.log(values[keep]), 1)
    return float(slope)


def audit_weighted_bound(solution: DualSolution, constant: Optional[float] = None,
                         time_constant: Optional[float] = None) -> WeightedBoundAudit:
    """
    Weighted growth ||psi_s/(1+|x|)|| <= C ||psi_0/(1+|x|)|| exp(D s + int ||E/(1+|x|)||)
    and the time modulus ||(psi_s - psi_0)/(1+|x|)|| against
    (sqrt(D s) + (s + sqrt(D) s^(3/2)) sup ||E/(1+|x|)||) |||grad psi_0|||.
    """
    settings = get_settings()
    grid = solution.grid
    constant = settings.weighted_constant if constant is None else constant
    time_constant = settings.dimensional(settings.time_constant, grid.dim) if time_constant is None else time_constant
    diffusion = solution.config.diffusion
    history = solution.history

    weighted0 = history["weighted"].iloc[0]
    envelope = constant * weighted0 * np.exp(diffusion * history["s"] + history["int_field_weighted"])
    weighted = history["weighted"].to_numpy()
    ratios = np.divide(weighted, envelope.to_numpy(), out=np.zeros_like(weighted), where=envelope.to_numpy() > 0)
    max_ratio = float(ratios.max())

    lip0 = float(history["lipschitz"].iloc[0])
    rows = []
    for s in solution.times:
        if s <= 0:
            continue
        passed = history[history["s"] < s + TIME_EPS]
        field_sup = float(passed["field_weighted"].max()) if len(passed) else 0.0
        change = weighted_sup(solution.at(s) - solution.psi0, grid)
        bracket = (np.sqrt(diffusion * s) + (s + np.sqrt(diffusion) * s**1.5) * field_sup) * lip0
        rows.append({"s": s, "change": change, "bracket": bracket,
                     "constant": change / bracket if bracket > 0 else (0.0 if change == 0 else np.inf)})
    modulus = pd.DataFrame(rows, columns=["s", "change", "bracket", "constant"])
    measured = float(modulus["constant"].max()) if len(modulus) else 0.0
    order = _observed_order(modulus["s"].to_numpy(), modulus["change"].to_numpy()) if len(modulus) else None

    flagged = max_ratio > 1.0 + settings.audit_slack or measured > time_constant * (1.0 + settings.audit_slack)
    if flagged:
        logger.warning("Weighted bound exceeded", max_ratio=max_ratio, measured_time_constant=measured)
    return WeightedBoundAudit(constant=constant, max_ratio=max_ratio, time_constant=time_constant,
                              measured_time_constant=measured, observed_order=order,
                              sqrt_term_expected=diffusion > 0, flagged=bool(flagged), modulus=modulus)


@dataclass
class TimeContinuityAudit:
    initial_rate_bound: float
    initial_ratio: float
    uniform_ratio: Optional[float]
    flagged: bool


def audit_time_continuity(solution: DualSolution, field: VelocityField) -> TimeContinuityAudit:
    """
    ||(psi_s - psi_0)/s|| <= ||E_T . grad psi_0 + D Laplace psi_0|| for autonomous fields,
    with the right-hand side taken from the scheme's own generator; for D = 0 also
    ||psi_{s1} - psi_{s0}|| / (s1 - s0) <= |||grad psi_{s0}||| * d * sup|E|.
    """
    if not field.autonomous:
        raise UnsupportedError("Time-continuity audit needs a time-independent field")
    grid = solution.grid
    config = solution.config
    faces = field.on_faces(config.horizon, grid)
    generator = dual_step(solution.psi0, faces, grid, config.diffusion, 1.0, config.boundary) - solution.psi0
    rate_bound = float(np.max(np.abs(generator)))
    ratios = []
    for s in solution.times:
        if s <= 0:
            continue
        rate = float(np.max(np.abs(solution.at(s) - solution.psi0))) / s
        ratios.append(rate / rate_bound if rate_bound > 0 else (0.0 if rate == 0 else np.inf))
    initial_ratio = max(ratios) if ratios else 0.0

    uniform_ratio = None
    if config.diffusion == 0.0:
        speed = float(np.max(np.linalg.norm(field.on_centers(config.horizon, grid), axis=-1)))
        times = solution.times
        uniform = []
        for s0, s1 in zip(times[:-1], times[1:]):
            psi_s0 = solution.at(s0)
            rate = float(np.max(np.abs(solution.at(s1) - psi_s0))) / (s1 - s0)
            bound = lipschitz_constant(psi_s0, grid) * speed * grid.dim
            uniform.append(rate / bound if bound > 0 else (0.0 if rate == 0 else np.inf))
        uniform_ratio = max(uniform) if uniform else 0.0

    slack = 1.0 + get_settings().audit_slack
    flagged = initial_ratio > slack or (uniform_ratio is not None and uniform_ratio > slack)
    return TimeContinuityAudit(initial_rate_bound=rate_bound, initial_ratio=float(initial_ratio),
                               uniform_ratio=uniform_ratio, flagged=bool(flagged))


def _check_compatible(first: DualSolution, second: DualSolution) -> None:
    if first.grid != second.grid:
        raise ConfigError("Dual solutions live on different grids")
    if abs(first.config.horizon - second.config.horizon) > TIME_EPS:
        raise ConfigError("Dual solutions have different horizons")
    if not np.array_equal(first.psi0, second.psi0):
        raise ConfigError("Dual solutions start from different psi0")


def field_difference_integral(field_a: VelocityField, field_b: VelocityField, grid: GridSpec, horizon: float,
                              norm: str = "weighted", samples: int = 33) -> float:
    """
    int_0^T ||E_{T-s} - E_hat_{T-s}|| ds by the trapezoid rule

    norm: 'weighted' for sup |dE|/(1+|x|), 'w1inf' for sup |dE| + sup |grad dE|
    """
    s = np.linspace(0.0, horizon, samples)
    values = []
    for point in s:
        gap = field_a.on_centers(horizon - point, grid) - field_b.on_centers(horizon - point, grid)
        if norm == "weighted":
            values.append(weighted_sup(gap, grid))
        elif norm == "w1inf":
            values.append(float(np.max(np.linalg.norm(gap, axis=-1))) + field_gradient_sup(gap, grid))
        else:
            raise ConfigError(f"Unknown field norm '{norm}'")
    return float(trapezoid(values, s))


@dataclass
class ContinuousDependenceAudit:
    numerator: float
    denominator: float
    ratio: float
    envelope: float
    flagged: bool


def audit_continuous_dependence(solution_a: DualSolution, solution_b: DualSolution, field_a: VelocityField,
                                field_b: VelocityField) -> ContinuousDependenceAudit:
    """
    sup_s ||(psi_s - psi_hat_s)/(1+|x|)|| / int_0^T ||(E - E_hat)/(1+|x|)||

    The envelope is |||grad psi_0||| exp(C int ||grad E||); the ratio is flagged above it.

    Raises:
        ConfigError: different grids, horizons or initial data
    """
    _check_compatible(solution_a, solution_b)
    settings = get_settings()
    grid = solution_a.grid
    common = [s for s in solution_a.times if any(abs(s - o) <= 1e-9 for o in solution_b.times)]
    numerator = max(weighted_sup(solution_a.at(s) - solution_b.at(s), grid) for s in common)
    denominator = field_difference_integral(field_a, field_b, grid, solution_a.config.horizon)
    if numerator == 0.0:
        ratio = 0.0
    elif denominator == 0.0:
        ratio = float("inf")
    else:
        ratio = numerator / denominator
    constant = settings.dimensional(settings.gradient_constant, grid.dim)
    growth = max(solution_a.history["int_field_grad"].iloc[-1], solution_b.history["int_field_grad"].iloc[-1])
    envelope = float(solution_a.history["lipschitz"].iloc[0] * np.exp(constant * growth))
    flagged = ratio > envelope * (1.0 + settings.audit_slack)
    if flagged:
        logger.warning("Continuous dependence envelope exceeded", ratio=ratio, envelope=envelope)
    return ContinuousDependenceAudit(numerator=float(numerator), denominator=denominator, ratio=float(ratio),
                                     envelope=envelope, flagged=bool(flagged))


@dataclass
class L2GradientAudit:
    constant: float
    max_ratio: float
    measured_constant: Optional[float]
    nonincreasing: bool
    pair_constant: Optional[float]
    flagged: bool


def audit_l2_gradient(solution: DualSolution, constant: Optional[float] = None,
                      other: Optional[DualSolution] = None, field: Optional[VelocityField] = None,
                      other_field: Optional[VelocityField] = None) -> L2GradientAudit:
    """
    ||grad psi_s||_L2 <= ||grad psi_0||_L2 exp(C int ||grad E||), D > 0 only

    With a paired solution and both fields, also reports the measured constant of
    ||grad(psi_s - psi_hat_s)||^2 / ((1 + 1/D) int ||E - E_hat||_W1inf).

    Raises:
        UnsupportedError: D = 0, where the estimate degenerates
    """
    diffusion = solution.config.diffusion
    if diffusion <= 0.0:
        raise UnsupportedError("L2 gradient estimates need D > 0")
    settings = get_settings()
    grid = solution.grid
    constant = settings.dimensional(settings.l2_gradient_constant, grid.dim) if constant is None else constant
    history = solution.history
    l2 = history["l2_gradient"].to_numpy()
    integral = history["int_field_grad"].to_numpy()
    base = l2[0]
    if base == 0.0:
        ratios = np.zeros_like(l2)
        measured = None
    else:
        ratios = l2 / (base * np.exp(constant * integral))
        growth = np.log(np.maximum(l2, 1e-300) / base)
        usable = integral > 0
        measured = float(np.max(growth[usable] / integral[usable])) if np.any(usable) else None
    nonincreasing = bool(np.all(np.diff(l2) <= 1e-12 * max(base, 1.0)))

    pair_constant = None
    if other is not None:
        if field is None or other_field is None:
            raise ConfigError("Paired L2 audit needs both fields")
        _check_compatible(solution, other)
        gap = l2_gradient(solution.final - other.final, grid) ** 2
        scale = (1.0 + 1.0 / diffusion) * field_difference_integral(field, other_field, grid,
                                                                    solution.config.horizon, norm="w1inf")
        pair_constant = float(gap / scale) if scale > 0 else (0.0 if gap == 0 else float("inf"))

    max_ratio = float(ratios.max())
    flagged = max_ratio > 1.0 + settings.audit_slack
    if flagged:
        logger.warning("L2 gradient bound exceeded", max_ratio=max_ratio, constant=constant)
    return L2GradientAudit(constant=constant, max_ratio=max_ratio, measured_constant=measured,
                           nonincreasing=nonincreasing, pair_constant=pair_constant, flagged=bool(flagged))


@dataclass
class SupportGrowthAudit:
    initial_radius: float
    final_radius: float
    allowed_radius: float
    flagged: bool


def audit_support_growth(solution: DualSolution, threshold: float = 1e-10) -> SupportGrowthAudit:
    """
    For D = 0, supp psi_s stays within supp psi_0 + B(int_0^s sup|E|) up to one cell
    of numerical spreading per unit of CFL-limited transport.
    """
    if solution.config.diffusion > 0:
        raise UnsupportedError("Support growth is only finite for D = 0")
    grid = solution.grid
    centers = grid.centers()

    def extent(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mask = np.abs(values) > threshold
        if not np.any(mask):
            return np.zeros(grid.dim), np.zeros(grid.dim)
        inside = centers[mask]
        return inside.min(axis=0), inside.max(axis=0)

    lo0, hi0 = extent(solution.psi0)
    lo1, hi1 = extent(solution.final)
    spread = float(np.max(np.concatenate([lo0 - lo1, hi1 - hi0, [0.0]])))
    travel = float(solution.history["int_field_sup"].iloc[-1])
    # upwind leaks a geometric tail; the threshold cuts it at a few cells ahead of the front
    allowed = travel + 4.0 * float(np.max(grid.spacing)) * max(1.0, np.log10(1.0 / threshold))
    return SupportGrowthAudit(initial_radius=float(np.max(np.abs(np.concatenate([lo0, hi0])))),
                              final_radius=float(np.max(np.abs(np.concatenate([lo1, hi1])))),
                              allowed_radius=allowed, flagged=bool(spread > allowed))


def characteristics_reference(field: VelocityField, psi0: Callable[[np.ndarray], np.ndarray], horizon: float,
                              points: np.ndarray, steps: int = 400) -> np.ndarray:
    """
    D = 0 reference by characteristics, RK4

    psi is constant along dy/ds = -E_{T-s}(y); tracing from y back to s = 0 is the
    forward flow dX/dt = E_t(X), X_0 = y, so psi_T(y) = psi0(X_T).
    """
    x = np.array(points, dtype=float).reshape(-1, field.dim)
    dt = horizon / steps
    for k in range(steps):
        t = k * dt
        k1 = field(t, x)
        k2 = field(t + 0.5 * dt, x + 0.5 * dt * k1)
        k3 = field(t + 0.5 * dt, x + 0.5 * dt * k2)
        k4 = field(t + dt, x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return np.asarray(psi0(x), dtype=float).reshape(-1)
