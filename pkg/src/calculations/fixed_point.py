"""
Picard construction of the coupled flow and entropy-pair certificates

The map T[mu] = (S_t[mu0^i, -K^i[mu]])_i is iterated on windows of length T2 starting
from the frozen guess mu_t = mu0; windows are halved until the measured contraction
ratio drops below the configured threshold, then chained to reach the horizon.
Certificates pair every trajectory with dual solves over a probe bank and record the
duality residual |int psi0 dmu_T - int psi_T dmu_0| with the dual estimate audits.
"""

from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
import structlog

from src.calculations.dual_solver import (
    DualConfig,
    audit_gradient_bound,
    audit_maximum_principle,
    audit_weighted_bound,
    solve_dual,
)
from src.calculations.grid_ops import lipschitz_constant, weighted_sup
from src.calculations.metrics import d1, probe_distance
from src.calculations.primal_solver import (
    PrimalConfig,
    Trajectory,
    comparable,
    frozen_field_flow,
    refine_density,
    solve,
    split_configs,
)
from src.calculations.probes import Probe, check_probe, default_probe_bank
from src.calculations.velocity import InteractionKernel, VelocityField, drift_from_trajectory
from src.config import get_settings
from src.core.errors import BallEscapeError, ConfigError, NonContractionError
from src.core.measures import GridDensity, GridSpec, Measure, ParticleMeasure, integrate

logger = structlog.get_logger(__name__)

WINDOW_SAMPLES = 8


# ---------------------------------------------------------------------------
# Iterate distances
# ---------------------------------------------------------------------------

def metric_name(trajectory: Trajectory) -> str:
    """Which d1 evaluation applies to this trajectory"""
    first = trajectory.states[0][0]
    if first.dim == 1:
        return "d1_1d"
    if isinstance(first, ParticleMeasure):
        return "d1_particles"
    return "probe_bank"


def trajectory_distance(a: Trajectory, b: Trajectory, probes: Optional[Sequence[Probe]] = None) -> float:
    """sup over shared output times and species of d1 (or its probe lower bound on 2D grids)"""
    if len(a.times) != len(b.times) or not np.allclose(a.times, b.times):
        raise ConfigError("Trajectories have different output times")
    use_probes = metric_name(a) == "probe_bank"
    if use_probes and probes is None:
        probes = default_probe_bank(a.grid)
    distance = 0.0
    for state_a, state_b in zip(a.states, b.states):
        for mu, nu in zip(state_a, state_b):
            if use_probes:
                value = probe_distance(mu, nu, probes)
            else:
                value = d1(comparable(mu), comparable(nu))
            distance = max(distance, value)
    return distance


def _first_moment(measure: Measure) -> float:
    return integrate(measure, lambda x: np.linalg.norm(x, axis=-1))


# ---------------------------------------------------------------------------
# Picard iteration
# ---------------------------------------------------------------------------

@dataclass
class PicardWindow:
    start: float
    length: float
    distances: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    radii: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.distances)

    @property
    def contraction_ratio(self) -> Optional[float]:
        return self.ratios[0] if self.ratios else None


@dataclass
class PicardState:
    """
    Iteration record of a Picard solve

    Attributes:
        iteration: iterates computed over all windows (rejected windows included)
        distances: successive-iterate distances, all windows in order
        radii: largest first moment of each iterate
        ball_radius: R of the confining ball Q(R)
        metric: how iterate distances were measured
        windows: accepted windows
        rejected: window lengths discarded for contracting too slowly
    """

    iteration: int = 0
    distances: list[float] = field(default_factory=list)
    radii: list[float] = field(default_factory=list)
    ball_radius: float = 0.0
    metric: str = ""
    windows: list[PicardWindow] = field(default_factory=list)
    rejected: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def contraction_ratios(self) -> list[Optional[float]]:
        return [w.contraction_ratio for w in self.windows]

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for w in self.windows:
            for n, distance in enumerate(w.distances, start=1):
                rows.append({
                    "window_start": w.start,
                    "window_length": w.length,
                    "iterate": n,
                    "distance": distance,
                    "ratio": w.ratios[n - 2] if 2 <= n <= len(w.ratios) + 1 else np.nan,
                    "radius": w.radii[n - 1],
                })
        return pd.DataFrame(rows)


def _window_outputs(config: PrimalConfig, length: float) -> tuple[float, ...]:
    inside = [t for t in config.outputs if 0.0 < t < length]
    return tuple(sorted({*inside, *np.linspace(0.0, length, WINDOW_SAMPLES + 1)}))


def _constant_guess(window_config: PrimalConfig, state: list[Measure]) -> Trajectory:
    return Trajectory(times=list(window_config.outputs), states=[list(state)] * len(window_config.outputs),
                      representation=window_config.representation, diffusion=window_config.diffusion)


def _check_ball(trajectory: Trajectory, radius: float, history: list[float]) -> float:
    largest = max(_first_moment(m) for state in trajectory.states for m in state)
    history.append(largest)
    if largest > radius:
        raise BallEscapeError(f"Iterate left the moment ball: first moment {largest:.4g} > R={radius:.4g}",
                              radius=radius, moments=history)
    return largest


def iterate_window(config: PrimalConfig, kernel: InteractionKernel, state: list[Measure], length: float,
                   tol: float, max_iter: int, radius: float, record: PicardState,
                   halve_on_slow: bool = True) -> tuple[Optional[Trajectory], PicardWindow]:
    """
    Picard iterates on one window

    Returns:
        (trajectory, window); trajectory is None when the window contracted too slowly
        and `halve_on_slow` asked for a shorter one
    """
    settings = get_settings()
    window_config = replace(config, horizon=length, outputs=_window_outputs(config, length))
    window = PicardWindow(start=0.0, length=length)
    guess = _constant_guess(window_config, state)
    probes = default_probe_bank(config.grid) if metric_name(guess) == "probe_bank" else None
    for _ in range(max_iter):
        fields = [drift_from_trajectory(kernel, guess, i) for i in range(kernel.n_species)]
        iterate = frozen_field_flow(window_config, fields, state)
        distance = trajectory_distance(iterate, guess, probes)
        record.iteration += 1
        record.distances.append(distance)
        window.distances.append(distance)
        window.radii.append(_check_ball(iterate, radius, record.radii))
        if len(window.distances) >= 2 and window.distances[-2] > 0:
            window.ratios.append(distance / window.distances[-2])
        logger.debug("Picard iterate", iterate=window.iterations, distance=distance, window=length)
        guess = iterate
        if distance < tol:
            window.converged = True
            return iterate, window
        if halve_on_slow and window.ratios and window.ratios[-1] >= settings.picard_ratio_threshold:
            if length / 2.0 >= settings.picard_min_window:
                return None, window
    raise NonContractionError(
        f"Picard iteration did not reach tol={tol:g} within {max_iter} iterates on a window of {length:g}",
        distances=window.distances, ratios=window.ratios)


def picard_solve(config: PrimalConfig, kernel: InteractionKernel, mu0: Sequence[Measure],
                 tol: Optional[float] = None, max_iter: Optional[int] = None, window: Optional[float] = None,
                 ball_radius: Optional[float] = None) -> tuple[Trajectory, PicardState]:
    """
    Coupled solution as the fixed point of the frozen-field map, window by window

    Args:
        config: forward configuration (representation, grid, outputs, ...)
        kernel: interaction kernel
        mu0: initial measures per species
        tol: stop when successive iterates are closer than this in sup_t d1
        max_iter: iterates allowed per window
        window: initial window length T2 (default: the whole horizon)
        ball_radius: R of Q(R) (default ball_factor * (1 + largest initial first moment))

    Returns:
        (trajectory on all window output times, PicardState)

    Raises:
        NonContractionError: max_iter reached on a window
        BallEscapeError: an iterate left Q(R)
    """
    settings = get_settings()
    tol = settings.picard_tol if tol is None else tol
    max_iter = settings.picard_max_iter if max_iter is None else max_iter
    if tol <= 0:
        raise ConfigError("Picard tolerance must be positive")
    mu0 = list(mu0)
    moments = [_first_moment(m) for m in mu0]
    radius = ball_radius if ball_radius is not None else settings.ball_factor * (1.0 + max(moments))
    record = PicardState(ball_radius=radius)

    if kernel.is_zero:
        zero = [VelocityField.zero(mu0[0].dim)] * config.n_species
        trajectory = frozen_field_flow(config, zero, mu0)
        record.iteration = 1
        record.metric = metric_name(trajectory)
        record.windows.append(PicardWindow(start=0.0, length=config.horizon, converged=True))
        record.converged = True
        return trajectory, record

    length = min(window or config.horizon, config.horizon)
    start = 0.0
    state = mu0
    times, states = [0.0], [mu0]
    largest_step = 0.0
    while start < config.horizon - 1e-12:
        length = min(length, config.horizon - start)
        local = replace(config, outputs=tuple(t - start for t in config.outputs if t > start))
        trajectory, current = iterate_window(local, kernel, state, length, tol, max_iter, radius, record)
        if trajectory is None:
            record.rejected.append(length)
            logger.info("Halving Picard window", length=length, ratio=current.ratios[-1])
            length = length / 2.0
            continue
        current.start = start
        record.windows.append(current)
        record.metric = metric_name(trajectory)
        times.extend(start + t for t in trajectory.times[1:])
        states.extend(trajectory.states[1:])
        largest_step = max(largest_step, trajectory.max_step)
        state = trajectory.final
        start += length
    record.converged = True
    logger.info("Picard solve finished", iterations=record.iteration, windows=len(record.windows),
                ratios=record.contraction_ratios)
    return Trajectory(times=times, states=states, representation=config.representation,
                      diffusion=config.diffusion, max_step=largest_step), record


def contraction_ratio(config: PrimalConfig, kernel: InteractionKernel, mu0: Sequence[Measure], window: float,
                      iterates: int = 3) -> float:
    """First measured ratio d(T^3, T^2) / d(T^2, T) on a fixed window of length `window`"""
    record = PicardState(ball_radius=np.inf)
    try:
        _, window_record = iterate_window(config, kernel, list(mu0), window, np.finfo(float).tiny, iterates,
                                          np.inf, record, halve_on_slow=False)
        ratios = window_record.ratios
    except NonContractionError as exc:
        ratios = exc.ratios
    return float(ratios[0]) if ratios else 0.0


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------

def dual_grid_for(trajectory: Trajectory, cells: Optional[int] = None) -> GridSpec:
    """The trajectory's own grid, or a box around every atom it visits with room to spare"""
    if trajectory.grid is not None:
        return trajectory.grid
    points = np.vstack([m.positions for state in trajectory.states for m in state])
    low, high = points.min(axis=0), points.max(axis=0)
    pad = np.maximum(1.0, 0.5 * (high - low))
    dim = points.shape[1]
    cells = cells or (256 if dim == 1 else 64)
    return GridSpec(tuple(low - pad), tuple(high + pad), (cells,) * dim)


def _fields_for(trajectory: Trajectory, kernel: Optional[InteractionKernel],
                fields: Optional[Union[VelocityField, Sequence[VelocityField]]]) -> list[VelocityField]:
    if fields is not None:
        if isinstance(fields, VelocityField):
            return [fields] * trajectory.n_species
        return list(fields)
    if kernel is None:
        raise ConfigError("Certification needs a kernel or explicit fields")
    return [drift_from_trajectory(kernel, trajectory, i) for i in range(trajectory.n_species)]


def certificate_tolerance(probe: Probe, horizon: float, grid: GridSpec, dual_step: float, primal_step: float,
                          sup_psi0: float, outflux: float) -> float:
    """base + lip * (1 + T) * (a dx + b ds + c dt) + sup|psi0| * mass lost through the walls"""
    settings = get_settings()
    dx = float(np.max(grid.spacing))
    scale = settings.cert_dx_factor * dx + settings.cert_ds_factor * dual_step + settings.cert_dt_factor * primal_step
    return settings.cert_base + probe.lipschitz * (1.0 + horizon) * scale + sup_psi0 * outflux


@dataclass
class EntropyPairCertificate:
    """
    Duality residuals of one trajectory over a probe bank, species and horizons

    Each record carries the residual, its tolerance and the dual audit summaries; the
    bank is finite, so a pass only covers the listed probes.
    """

    horizons: list[float]
    probes: list[str]
    metric: str
    grid: dict
    records: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.records) and all(r["passed"] for r in self.records)

    @property
    def max_residual(self) -> float:
        return max((r["residual"] for r in self.records), default=0.0)

    @property
    def flags(self) -> list[str]:
        flagged = []
        for r in self.records:
            for audit in ("gradient_flagged", "weighted_flagged"):
                if r[audit]:
                    flagged.append(f"{audit.split('_')[0]}:{r['probe']}:species{r['species']}:T={r['horizon']:g}")
        return flagged

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.records)

    def summary(self) -> dict:
        return {
            "passed": self.passed,
            "max_residual": self.max_residual,
            "horizons": self.horizons,
            "probes": self.probes,
            "metric": self.metric,
            "grid": self.grid,
            "records": len(self.records),
            "flags": self.flags,
        }


def certify_entropy_pair(trajectory: Trajectory, kernel: Optional[InteractionKernel] = None,
                         probes: Optional[Sequence[Probe]] = None, horizons: Optional[Sequence[float]] = None,
                         fields: Optional[Union[VelocityField, Sequence[VelocityField]]] = None,
                         grid: Optional[GridSpec] = None, boundary: str = "neumann") -> EntropyPairCertificate:
    """
    Dual solves with E = -K[mu] (or the given fields) for every (T, probe, species)

    Args:
        trajectory: solved forward trajectory; every horizon must be one of its output times
        kernel: kernel generating the drift along the trajectory
        probes: probe bank (default: default_probe_bank on the dual grid)
        horizons: certification horizons (default: the final time)
        fields: frozen fields instead of a kernel
        grid: dual grid (default: the trajectory grid or a box around the atoms)

    Raises:
        ProbeError: a probe is not Lipschitz on the dual grid
    """
    grid = grid or dual_grid_for(trajectory)
    fields = _fields_for(trajectory, kernel, fields)
    probes = list(probes) if probes is not None else default_probe_bank(grid)
    for probe in probes:
        check_probe(probe, grid)
    horizons = list(horizons) if horizons is not None else [trajectory.horizon]
    certificate = EntropyPairCertificate(horizons=horizons, probes=[p.name for p in probes],
                                         metric=metric_name(trajectory), grid=grid.to_dict())
    initial = trajectory.initial
    for horizon in horizons:
        final = trajectory.at(horizon)
        for probe in probes:
            for i, species_field in enumerate(fields):
                config = DualConfig(horizon=horizon, grid=grid, diffusion=trajectory.diffusion[i], boundary=boundary)
                solution = solve_dual(config, species_field, probe, descriptor=probe.name)
                lhs = integrate(final[i], probe)
                rhs = solution.integrate(initial[i])
                residual = abs(lhs - rhs)
                outflux = final[i].outflux if isinstance(final[i], GridDensity) else 0.0
                tolerance = certificate_tolerance(probe, horizon, grid, float(solution.history["ds"].max()),
                                                  trajectory.max_step, float(np.max(np.abs(solution.psi0))), outflux)
                principle = audit_maximum_principle(solution)
                gradient = audit_gradient_bound(solution)
                weighted = audit_weighted_bound(solution)
                certificate.records.append({
                    "horizon": horizon,
                    "probe": probe.name,
                    "species": i,
                    "lhs": lhs,
                    "rhs": rhs,
                    "residual": residual,
                    "tolerance": tolerance,
                    "passed": bool(residual <= tolerance and not principle.flagged),
                    "lipschitz_final": lipschitz_constant(solution.final, grid),
                    "max_principle_violation": principle.violation,
                    "gradient_ratio": gradient.max_ratio,
                    "gradient_flagged": gradient.flagged,
                    "weighted_ratio": weighted.max_ratio,
                    "weighted_flagged": weighted.flagged,
                })
    if not certificate.passed:
        logger.warning("Entropy pair certificate failed", max_residual=certificate.max_residual)
    logger.info("Certificate finished", records=len(certificate.records), passed=certificate.passed,
                max_residual=certificate.max_residual)
    return certificate


# ---------------------------------------------------------------------------
# Continuous dependence and semigroup
# ---------------------------------------------------------------------------

def duality_distance_bound(trajectory_a: Trajectory, trajectory_b: Trajectory,
                           fields_a: Sequence[VelocityField], fields_b: Sequence[VelocityField],
                           probes: Sequence[Probe], grid: GridSpec) -> pd.DataFrame:
    """
    Per probe and species: |int psi0 d(mu_T - mu_hat_T)| against
    d1(mu0, mu_hat0) Lip(psi_T) + (1 + int |x| dmu_hat0) sup|psi_T - psi_hat_T| / (1 + |x|)
    """
    horizon = trajectory_a.horizon
    rows = []
    for probe in probes:
        for i in range(trajectory_a.n_species):
            config = DualConfig(horizon=horizon, grid=grid, diffusion=trajectory_a.diffusion[i])
            psi_a = solve_dual(config, fields_a[i], probe, descriptor=probe.name)
            psi_b = solve_dual(config, fields_b[i], probe, descriptor=probe.name)
            mu0, nu0 = trajectory_a.initial[i], trajectory_b.initial[i]
            observed = abs(integrate(trajectory_a.final[i], probe) - integrate(trajectory_b.final[i], probe))
            initial = d1(comparable(mu0), comparable(nu0))
            bound = (initial * lipschitz_constant(psi_a.final, grid)
                     + (1.0 + _first_moment(nu0)) * weighted_sup(psi_a.final - psi_b.final, grid))
            rows.append({"probe": probe.name, "species": i, "observed": observed, "bound": bound})
    return pd.DataFrame(rows)


@dataclass
class ContinuousDependenceReport:
    initial_distance: float
    table: pd.DataFrame
    max_ratio: float
    flagged: bool
    duality: Optional[pd.DataFrame] = None
    bound_holds: Optional[bool] = None

    def to_dict(self) -> dict:
        data = asdict(self)
        data["table"] = self.table.to_dict(orient="records")
        data["duality"] = None if self.duality is None else self.duality.to_dict(orient="records")
        return data


def continuous_dependence_check(trajectory_a: Trajectory, trajectory_b: Trajectory, kernel: InteractionKernel,
                                probes: Optional[Sequence[Probe]] = None, grid: Optional[GridSpec] = None,
                                with_duality: bool = True) -> ContinuousDependenceReport:
    """
    sup_t d1(mu_t, mu_hat_t) / d1(mu0, mu_hat0) against the envelope exp(2 L t)

    Raises:
        SizeError: d1 unavailable for the atom counts
        ConfigError: trajectories on different output times
    """
    if len(trajectory_a.times) != len(trajectory_b.times) or not np.allclose(trajectory_a.times, trajectory_b.times):
        raise ConfigError("Trajectories have different output times")
    settings = get_settings()
    lipschitz = kernel.lipschitz_bound()
    initial = max(d1(comparable(a), comparable(b)) for a, b in zip(trajectory_a.initial, trajectory_b.initial))
    rows = []
    for t, state_a, state_b in zip(trajectory_a.times, trajectory_a.states, trajectory_b.states):
        distance = max(d1(comparable(a), comparable(b)) for a, b in zip(state_a, state_b))
        if initial > 0:
            ratio = distance / initial
        else:
            ratio = 0.0 if distance == 0 else np.inf
        rows.append({"t": t, "distance": distance, "ratio": ratio, "envelope": float(np.exp(2.0 * lipschitz * t))})
    table = pd.DataFrame(rows)
    flagged = bool(np.any(table["ratio"] > table["envelope"] * (1.0 + settings.audit_slack)))
    if flagged:
        logger.warning("Continuous dependence envelope exceeded", max_ratio=float(table["ratio"].max()))

    duality, holds = None, None
    if with_duality:
        grid = grid or dual_grid_for(trajectory_a)
        probes = list(probes) if probes is not None else default_probe_bank(grid)
        fields_a = _fields_for(trajectory_a, kernel, None)
        fields_b = _fields_for(trajectory_b, kernel, None)
        duality = duality_distance_bound(trajectory_a, trajectory_b, fields_a, fields_b, probes, grid)
        slack = float(np.max(grid.spacing)) * (1.0 + trajectory_a.horizon)
        holds = bool(np.all(duality["observed"] <= duality["bound"] + slack))
    return ContinuousDependenceReport(initial_distance=initial, table=table, max_ratio=float(table["ratio"].max()),
                                      flagged=flagged, duality=duality, bound_holds=holds)


@dataclass
class SemigroupReport:
    t_split: float
    horizon: float
    defect: float
    discretization_error: float
    passed: bool


def _refined_run(config: PrimalConfig, kernel: InteractionKernel, mu0: Sequence[Measure],
                 reference: Trajectory) -> Trajectory:
    if config.representation == "grid":
        grid = config.grid
        fine = GridSpec(grid.lower, grid.upper, tuple(2 * n for n in grid.cells))
        return solve(replace(config, grid=fine), kernel, [refine_density(m, 2) for m in mu0])
    return solve(replace(config, time_step=0.5 * reference.max_step), kernel, mu0)


def semigroup_check(config: PrimalConfig, kernel: InteractionKernel, mu0: Sequence[Measure],
                    t_split: float) -> SemigroupReport:
    """
    S_T[mu0] against S_{T-t}[S_t[mu0]] for the coupled autonomous flow, judged against
    the discretization error of a single run (one refinement level)
    """
    full, first, second = split_configs(config, t_split)
    direct = solve(full, kernel, mu0)
    middle = solve(first, kernel, mu0).final
    composed = solve(second, kernel, middle).final
    defect = max(d1(comparable(a), comparable(b)) for a, b in zip(direct.final, composed))
    refined = _refined_run(full, kernel, mu0, direct)
    error = max(d1(comparable(a), comparable(b)) for a, b in zip(direct.final, refined.final))
    passed = defect <= 2.0 * error + 1e-12
    if not passed:
        logger.warning("Semigroup defect above discretization error", defect=defect, error=error)
    return SemigroupReport(t_split=t_split, horizon=config.horizon, defect=float(defect),
                           discretization_error=float(error), passed=bool(passed))
