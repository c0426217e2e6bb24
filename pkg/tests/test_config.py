import io
import json

import pytest
import structlog

from src.config import configure_logging, get_settings


@pytest.fixture
def reset_structlog():
    yield
    structlog.reset_defaults()


def test_logging_follows_replaced_stderr(monkeypatch, reset_structlog):
    configure_logging("INFO", json_output=True)
    logger = structlog.get_logger("dualflow.test")

    first = io.StringIO()
    monkeypatch.setattr("sys.stderr", first)
    logger.info("First event", step=1)
    first.close()

    second = io.StringIO()
    monkeypatch.setattr("sys.stderr", second)
    logger.info("Second event", step=2)

    record = json.loads(second.getvalue().strip())
    assert record["event"] == "Second event"
    assert record["step"] == 2


def test_log_level_filters(monkeypatch, reset_structlog):
    configure_logging("WARNING", json_output=True)
    stream = io.StringIO()
    monkeypatch.setattr("sys.stderr", stream)
    logger = structlog.get_logger("dualflow.test")
    logger.info("Hidden")
    logger.warning("Shown")
    assert [json.loads(line)["event"] for line in stream.getvalue().splitlines()] == ["Shown"]


def test_importing_the_api_leaves_logging_alone(reset_structlog):
    structlog.reset_defaults()
    import src.api.main  # noqa: F401

    assert not structlog.is_configured()


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("DUALFLOW_CFL", "0.5")
    get_settings.cache_clear()
    assert get_settings().cfl == 0.5
    get_settings.cache_clear()
