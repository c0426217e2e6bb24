"""
Run workflows

Glue between a validated RunConfig, the solvers and the run directory: simulate a
configuration (direct or Picard), certify the trajectory, re-certify a stored run, and
run the frozen-field dual block with its estimate audits.
"""

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import structlog

from src.calculations.dual_solver import (
    DualSolution,
    audit_gradient_bound,
    audit_l2_gradient,
    audit_maximum_principle,
    audit_support_growth,
    audit_time_continuity,
    audit_weighted_bound,
    solve_dual,
)
from src.calculations.fixed_point import (
    EntropyPairCertificate,
    PicardState,
    certify_entropy_pair,
    dual_grid_for,
    picard_solve,
)
from src.calculations.primal_solver import Trajectory, solve
from src.core.errors import ConfigError, UnsupportedError
from src.core.run_manager import RunManager
from src.data.loaders import DataExporter, load_trajectory
from src.data.run_config import (
    RunConfig,
    build_dual,
    build_initial_state,
    build_kernel,
    build_primal_config,
    build_probes,
    config_hash,
)

logger = structlog.get_logger(__name__)


@dataclass
class RunOutcome:
    name: str
    path: str
    config_hash: str
    trajectory: Trajectory
    picard: Optional[PicardState] = None
    certificate: Optional[EntropyPairCertificate] = None

    @property
    def passed(self) -> bool:
        return self.certificate is None or self.certificate.passed

    def summary(self) -> dict:
        return {
            "name": self.name,
            "path": self.path,
            "config_hash": self.config_hash,
            "representation": self.trajectory.representation,
            "times": list(self.trajectory.times),
            "n_species": self.trajectory.n_species,
            "mass_ledger": self.trajectory.mass_ledger().to_dict(orient="records"),
            "picard": None if self.picard is None else {
                "iterations": self.picard.iteration,
                "windows": len(self.picard.windows),
                "contraction_ratios": self.picard.contraction_ratios,
                "metric": self.picard.metric,
            },
            "certificate": None if self.certificate is None else self.certificate.summary(),
            "passed": self.passed,
        }


@dataclass
class DualOutcome:
    solution: DualSolution
    audits: dict[str, Any] = field(default_factory=dict)
    path: Optional[str] = None

    @property
    def passed(self) -> bool:
        return not self.audits["maximum_principle"]["flagged"]

    def summary(self) -> dict:
        history = self.solution.history
        return {
            "field": self.solution.field_label,
            "psi0": self.solution.descriptor,
            "horizon": self.solution.config.horizon,
            "diffusion": self.solution.config.diffusion,
            "grid": self.solution.grid.to_dict(),
            "steps": int(len(history) - 1),
            "snapshots": self.solution.times,
            "sup_norm_final": float(history["sup_norm"].iloc[-1]),
            "lipschitz_final": float(history["lipschitz"].iloc[-1]),
            "audits": self.audits,
            "passed": self.passed,
            "path": self.path,
        }


def _manager_for(config: RunConfig, base_dir: Optional[Path], runs_base: Optional[Union[str, Path]]) -> RunManager:
    if runs_base is None:
        runs_base = Path(config.output_dir)
        if not runs_base.is_absolute() and base_dir is not None:
            runs_base = base_dir / runs_base
    return RunManager(runs_base)


def certify_trajectory(config: RunConfig, trajectory: Trajectory) -> EntropyPairCertificate:
    """Certificate over the configured probe bank and horizons"""
    kernel = build_kernel(config)
    grid = trajectory.grid or dual_grid_for(trajectory, config.certify.cells)
    probes = build_probes(config, grid)
    horizons = config.certify.horizons or None
    return certify_entropy_pair(trajectory, kernel, probes=probes, horizons=horizons, grid=grid,
                                boundary=config.certify.boundary)


def simulate(config: RunConfig, base_dir: Optional[Path] = None, runs_base: Optional[Union[str, Path]] = None,
             overwrite: bool = True) -> RunOutcome:
    """
    Solve the forward problem of a run config, store snapshots and certify

    Args:
        config: validated run config
        base_dir: directory relative paths in the config resolve against
        runs_base: override of config.output_dir
        overwrite: replace an existing run directory of the same name

    Returns:
        RunOutcome; the run directory holds snapshots/, certificates/ and run.json
    """
    manager = _manager_for(config, base_dir, runs_base)
    digest = config_hash(config)
    manager.create_run(config.name, config.model_dump(mode="json"), digest, config.solver.representation,
                       overwrite=overwrite)
    run_path = manager.run_path(config.name)
    exporter = DataExporter()
    try:
        kernel = build_kernel(config)
        mu0 = build_initial_state(config, base_dir)
        primal = build_primal_config(config)
        picard = None
        if config.solver.method == "picard":
            settings = config.solver.picard
            trajectory, picard = picard_solve(primal, kernel, mu0, tol=settings.tol, max_iter=settings.max_iter,
                                              window=settings.window)
            exporter.export_data(picard.to_frame(), "csv", run_path / "results" / "picard.csv")
        else:
            trajectory = solve(primal, kernel, mu0)
        exporter.export_trajectory(trajectory, run_path / "snapshots")
        manager.update_run(config.name, status="solved", max_step=trajectory.max_step,
                           diffusion=list(trajectory.diffusion),
                           mass_ledger=trajectory.mass_ledger().to_dict(orient="records"))
        manager.append_log(config.name, "trajectory_solved", outputs=len(trajectory.times),
                           max_step=trajectory.max_step)

        certificate = None
        if config.certify.enabled:
            certificate = certify_trajectory(config, trajectory)
            exporter.export_certificate(certificate, run_path / "certificates")
            manager.update_run(config.name, status="certified" if certificate.passed else "certificate_failed",
                               certificate=certificate.summary())
            manager.append_log(config.name, "certificate", passed=certificate.passed,
                               max_residual=certificate.max_residual, flags=certificate.flags)
    except Exception as e:
        manager.update_run(config.name, status="error", error=str(e))
        manager.append_log(config.name, "error", error=str(e), type=type(e).__name__)
        raise

    outcome = RunOutcome(name=config.name, path=str(run_path), config_hash=digest, trajectory=trajectory,
                         picard=picard, certificate=certificate)
    manager.save_result(config.name, "summary", outcome.summary())
    logger.info("Run finished", name=config.name, passed=outcome.passed, path=str(run_path))
    return outcome


def certify_run_dir(run_dir: Union[str, Path]) -> RunOutcome:
    """
    Re-certify a stored run from its run.json and snapshot CSVs

    Raises:
        ConfigError: not a run directory
    """
    run_dir = Path(run_dir)
    run_data = RunManager.load_run_dir(run_dir)
    if run_data is None:
        raise ConfigError(f"{run_dir} is not a run directory (no run.json)")
    config = RunConfig.model_validate(run_data["config"])
    trajectory = load_trajectory(run_dir / "snapshots", diffusion=run_data.get("diffusion"),
                                 max_step=float(run_data.get("max_step", 0.0)))
    certificate = certify_trajectory(config, trajectory)
    DataExporter().export_certificate(certificate, run_dir / "certificates")

    manager = RunManager(run_dir.parent)
    manager.update_run(run_dir.name, status="certified" if certificate.passed else "certificate_failed",
                       certificate=certificate.summary())
    manager.append_log(run_dir.name, "recertified", passed=certificate.passed,
                       max_residual=certificate.max_residual)
    return RunOutcome(name=run_data["name"], path=str(run_dir), config_hash=run_data.get("config_hash", ""),
                      trajectory=trajectory, certificate=certificate)


def _record(audit: Any) -> dict:
    data = asdict(audit)
    for key, value in list(data.items()):
        if isinstance(value, np.ndarray):
            data.pop(key)
        elif hasattr(value, "to_dict"):
            data[key] = value.to_dict(orient="records")
    return data


def run_dual_audits(solution: DualSolution, field) -> dict[str, Any]:
    """Every audit that applies to this solve; inapplicable ones are reported as skipped"""
    audits = {
        "maximum_principle": _record(audit_maximum_principle(solution)),
        "gradient_bound": _record(audit_gradient_bound(solution)),
        "weighted_bound": _record(audit_weighted_bound(solution)),
    }
    optional = {
        "time_continuity": lambda: audit_time_continuity(solution, field),
        "l2_gradient": lambda: audit_l2_gradient(solution),
        "support_growth": lambda: audit_support_growth(solution),
    }
    for name, audit in optional.items():
        try:
            audits[name] = _record(audit())
        except UnsupportedError as e:
            audits[name] = {"skipped": str(e)}
    return audits


def dual(config: RunConfig, base_dir: Optional[Path] = None, runs_base: Optional[Union[str, Path]] = None,
         store: bool = True) -> DualOutcome:
    """
    Frozen-field dual solve of the config's dual block with its audits

    The snapshots and history go to <run>/dual/ when `store` is set; the run directory
    is created if the run does not exist yet.
    """
    dual_config, velocity, probe = build_dual(config, base_dir)
    solution = solve_dual(dual_config, velocity, probe, descriptor=probe.name)
    outcome = DualOutcome(solution=solution, audits=run_dual_audits(solution, velocity))
    if store:
        manager = _manager_for(config, base_dir, runs_base)
        if manager.get_run(config.name) is None:
            manager.create_run(config.name, config.model_dump(mode="json"), config_hash(config),
                               config.solver.representation)
        run_path = manager.run_path(config.name)
        DataExporter().export_dual(solution, run_path / "dual")
        outcome.path = str(run_path)
        manager.save_result(config.name, "dual", outcome.summary())
        manager.append_log(config.name, "dual_solved", psi0=probe.name, passed=outcome.passed)
    logger.info("Dual run finished", psi0=probe.name, passed=outcome.passed)
    return outcome
