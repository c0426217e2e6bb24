import json
from types import SimpleNamespace

import pytest

import src.cli
from src.cli import EXIT_CERTIFICATE, EXIT_ERROR, EXIT_OK, main, parse_params
from src.core.measures import ParticleMeasure
from src.data.loaders import save_measure


@pytest.fixture
def config_file(tmp_path, heat_run):
    def write(data=None, name="heat.json"):
        path = tmp_path / name
        path.write_text(json.dumps(data or heat_run))
        return str(path)
    return write


def test_parse_params():
    assert parse_params(["k=1e2;1e3,m=1;2", "t = 2"]) == {"k": "1e2;1e3", "m": "1;2", "t": "2"}


def test_simulate_and_recertify(tmp_path, config_file, capsys):
    runs = tmp_path / "runs"
    assert main(["simulate", config_file(), "--output-dir", str(runs)]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["certificate"]["passed"]
    assert (runs / "heat" / "snapshots" / "times.csv").exists()
    assert main(["certify", str(runs / "heat")]) == EXIT_OK


def test_simulate_without_certificate(tmp_path, config_file, capsys):
    output = tmp_path / "out.json"
    code = main(["simulate", config_file(), "--output-dir", str(tmp_path / "runs"), "--no-certify",
                 "--output", str(output)])
    assert code == EXIT_OK
    assert json.loads(output.read_text())["certificate"] is None


def test_failed_certificate_exit_code(monkeypatch, config_file):
    stub = SimpleNamespace(passed=False, summary=lambda: {"passed": False})
    monkeypatch.setattr(src.cli, "simulate", lambda *args, **kwargs: stub)
    assert main(["simulate", config_file()]) == EXIT_CERTIFICATE


def test_dual_command(tmp_path, config_file, heat_run, capsys):
    heat_run["dual"] = {"field": "constant", "value": 0.5, "psi0": "x1"}
    code = main(["dual", config_file(heat_run), "--output-dir", str(tmp_path / "runs")])
    assert code == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["psi0"] == "x1"
    assert summary["audits"]["l2_gradient"]["skipped"]
    assert (tmp_path / "runs" / "heat" / "dual" / "psi_history.csv").exists()


def test_errors_exit_with_one(tmp_path):
    assert main(["simulate", str(tmp_path / "absent.json")]) == EXIT_ERROR
    assert main(["certify", str(tmp_path)]) == EXIT_ERROR
    assert main(["scenario", "nope"]) == EXIT_ERROR


def test_scenario_list(capsys):
    assert main(["scenario", "list"]) == EXIT_OK
    names = [s["name"] for s in json.loads(capsys.readouterr().out)["scenarios"]]
    assert "heat_baseline" in names


def test_bad_param_syntax():
    with pytest.raises(SystemExit):
        main(["scenario", "heat_baseline", "--param", "novalue"])


def test_metrics_command(tmp_path, capsys):
    a = save_measure(ParticleMeasure.dirac(0.0), tmp_path / "a.csv")
    b = save_measure(ParticleMeasure.dirac(1.0), tmp_path / "b.csv")
    output = tmp_path / "metrics.json"
    assert main(["metrics", a, b, "--output", str(output)]) == EXIT_OK
    assert json.loads(output.read_text())["d1"] == pytest.approx(1.0)
