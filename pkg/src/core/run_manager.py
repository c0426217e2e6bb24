"""
Run Manager
Handles run directories, run metadata and stored results
"""

import json
import shutil
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional, Union

import structlog

from src.core.errors import ConfigError

logger = structlog.get_logger(__name__)

RUN_FILE = "run.json"
LOG_FILE = "run.log"


class RunManager:
    """
    Persistent run storage

    Layout of one run:
        <base>/<run>/run.json
        <base>/<run>/run.log            JSON lines
        <base>/<run>/snapshots/         trajectory CSVs
        <base>/<run>/dual/              psi snapshots and audit history
        <base>/<run>/certificates/      certificate records, summary, report
        <base>/<run>/results/           JSON results
    """

    SUBDIRS = ("snapshots", "dual", "certificates", "results")

    def __init__(self, runs_base: Union[str, Path] = "runs"):
        self.runs_base = Path(runs_base)
        self.runs_base.mkdir(parents=True, exist_ok=True)
        logger.debug("Run manager initialized", base=str(self.runs_base))

    def create_run(self, name: str, config: Dict[str, Any], config_hash: str, representation: str,
                   overwrite: bool = False) -> Dict[str, Any]:
        """
        Create the run directory and its run.json

        Raises:
            ConfigError: the run exists and overwrite is False
        """
        run_path = self.run_path(name)
        if run_path.exists():
            if not overwrite:
                raise ConfigError(f"Run '{name}' already exists")
            shutil.rmtree(run_path)
        for d in self.SUBDIRS:
            (run_path / d).mkdir(parents=True, exist_ok=True)

        now = datetime.now().isoformat()
        run_data = {
            "name": name,
            "created_at": now,
            "updated_at": now,
            "status": "created",
            "config": config,
            "config_hash": config_hash,
            "representation": representation,
            "mass_ledger": [],
            "results": [],
        }
        self._write(run_path, run_data)
        self.append_log(name, "run_created", config_hash=config_hash)
        logger.info("Run created", name=name, path=str(run_path))
        return run_data

    def run_path(self, name: str) -> Path:
        safe_name = self._sanitize_name(name)
        if not safe_name:
            raise ConfigError(f"Invalid run name '{name}'")
        return self.runs_base / safe_name

    def get_run(self, name: str) -> Optional[Dict]:
        return self.load_run_dir(self.run_path(name))

    @staticmethod
    def load_run_dir(run_path: Union[str, Path]) -> Optional[Dict]:
        """run.json of a run directory, None when there is none"""
        config_path = Path(run_path) / RUN_FILE
        if not config_path.exists():
            return None
        with open(config_path, "r") as f:
            return json.load(f)

    def update_run(self, name: str, **fields: Any) -> Dict[str, Any]:
        run_path = self.run_path(name)
        run_data = self.get_run(name)
        if run_data is None:
            raise ConfigError(f"Run '{name}' does not exist")
        run_data.update(fields)
        run_data["updated_at"] = datetime.now().isoformat()
        self._write(run_path, run_data)
        return run_data

    def list_runs(self) -> list:
        runs = []
        for run_path in self.runs_base.iterdir():
            if not run_path.is_dir():
                continue
            try:
                data = self.load_run_dir(run_path)
            except json.JSONDecodeError as e:
                logger.warning("Error loading run", path=str(run_path), error=str(e))
                continue
            if data is None:
                continue
            runs.append({
                "name": data.get("name"),
                "created_at": data.get("created_at", ""),
                "updated_at": data.get("updated_at", ""),
                "status": data.get("status", ""),
                "representation": data.get("representation", ""),
                "config_hash": data.get("config_hash", ""),
                "path": str(run_path),
            })
        return sorted(runs, key=lambda x: x.get("updated_at", ""), reverse=True)

    def delete_run(self, name: str) -> bool:
        run_path = self.run_path(name)
        if run_path.exists():
            shutil.rmtree(run_path)
            logger.info("Run deleted", name=name)
            return True
        return False

    def save_result(self, run_name: str, result_name: str, result_data: dict) -> Dict[str, str]:
        """Store a JSON result under results/ and register it in run.json"""
        run_data = self.get_run(run_name)
        if run_data is None:
            raise ConfigError(f"Run '{run_name}' does not exist")
        result_path = self.run_path(run_name) / "results" / f"{self._sanitize_name(result_name)}.json"
        with open(result_path, "w") as f:
            json.dump(result_data, f, indent=2, default=str)
        results = [r for r in run_data.get("results", []) if r != result_path.name] + [result_path.name]
        self.update_run(run_name, results=results)
        logger.info("Result saved", run=run_name, result=result_name)
        return {"path": str(result_path)}

    def load_result(self, run_name: str, result_name: str) -> Optional[Dict]:
        result_path = self.run_path(run_name) / "results" / f"{self._sanitize_name(result_name)}.json"
        if not result_path.exists():
            return None
        with open(result_path, "r") as f:
            return json.load(f)

    def append_log(self, run_name: str, event: str, **fields: Any) -> None:
        """One JSON object per line in run.log"""
        record = {"timestamp": datetime.now().isoformat(), "event": event, **fields}
        with open(self.run_path(run_name) / LOG_FILE, "a") as f:
            f.write(json.dumps(record, default=str) + "\n")

    def _write(self, run_path: Path, run_data: Dict[str, Any]) -> None:
        with open(run_path / RUN_FILE, "w") as f:
            json.dump(run_data, f, indent=2, default=str)

    def _sanitize_name(self, name: str) -> str:
        """Sanitize run name for filesystem"""
        return "".join(c for c in name if c.isalnum() or c in "-_ ").strip().replace(" ", "_")
