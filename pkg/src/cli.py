"""
dualflow command line

    dualflow simulate <config.json>
    dualflow dual <config.json>
    dualflow certify <run-dir>
    dualflow scenario <name> [--param k=1e2;1e3,m=1;2;4]
    dualflow scenario list
    dualflow metrics <fileA.csv> <fileB.csv>

Exit codes: 0 when every certificate passes, 2 when a certificate (or the dual maximum
principle) fails, 1 on solver or configuration errors.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import structlog

from src.calculations.metrics import metric_report
from src.calculations.runs import certify_run_dir, dual, simulate
from src.calculations.scenarios import list_scenarios, run_scenario
from src.config import configure_logging
from src.core.errors import DualflowError
from src.data.loaders import json_default, load_measure
from src.data.run_config import load_run_config

logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CERTIFICATE = 2


def parse_params(values: Sequence[str]) -> dict:
    """'k=1e2;1e3,m=1;2' (possibly repeated) -> {'k': '1e2;1e3', 'm': '1;2'}"""
    params = {}
    for value in values:
        for item in value.split(","):
            item = item.strip()
            if not item:
                continue
            key, sep, raw = item.partition("=")
            if not sep or not key.strip():
                raise argparse.ArgumentTypeError(f"Parameter '{item}' is not key=value")
            params[key.strip()] = raw.strip()
    return params


def _emit(payload: dict, output: Optional[str]) -> None:
    text = json.dumps(payload, indent=2, default=json_default)
    if output:
        Path(output).write_text(text + "\n")
    print(text)


def cmd_simulate(args: argparse.Namespace) -> int:
    path = Path(args.config)
    config = load_run_config(path)
    if args.no_certify:
        config.certify.enabled = False
    outcome = simulate(config, base_dir=path.parent, runs_base=args.output_dir)
    _emit(outcome.summary(), args.output)
    return EXIT_OK if outcome.passed else EXIT_CERTIFICATE


def cmd_dual(args: argparse.Namespace) -> int:
    path = Path(args.config)
    config = load_run_config(path)
    outcome = dual(config, base_dir=path.parent, runs_base=args.output_dir)
    _emit(outcome.summary(), args.output)
    return EXIT_OK if outcome.passed else EXIT_CERTIFICATE


def cmd_certify(args: argparse.Namespace) -> int:
    outcome = certify_run_dir(args.run_dir)
    _emit(outcome.certificate.summary(), args.output)
    return EXIT_OK if outcome.passed else EXIT_CERTIFICATE


def cmd_scenario(args: argparse.Namespace) -> int:
    if args.name == "list":
        _emit({"scenarios": list_scenarios()}, args.output)
        return EXIT_OK
    result = run_scenario(args.name, parse_params(args.param))
    _emit(result.to_dict(), args.output)
    return EXIT_OK if result.passed else EXIT_CERTIFICATE


def cmd_metrics(args: argparse.Namespace) -> int:
    report = metric_report(load_measure(args.file_a), load_measure(args.file_b))
    _emit(report.to_dict(), args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualflow",
        description="Simulate aggregation-diffusion systems and certify them through their dual problem")
    parser.add_argument("--log-json", action="store_true", help="log one JSON object per line")
    parser.add_argument("--log-level", default=None, help="log level (default from DUALFLOW_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate_parser = sub.add_parser("simulate", help="run a configuration and certify its trajectory")
    simulate_parser.add_argument("config", help="run config (JSON)")
    simulate_parser.add_argument("--output-dir", default=None, help="override the config's output_dir")
    simulate_parser.add_argument("--no-certify", action="store_true", help="skip the certificate")
    simulate_parser.set_defaults(handler=cmd_simulate)

    dual_parser = sub.add_parser("dual", help="frozen-field dual solve with estimate audits")
    dual_parser.add_argument("config", help="run config with a dual block (JSON)")
    dual_parser.add_argument("--output-dir", default=None, help="override the config's output_dir")
    dual_parser.set_defaults(handler=cmd_dual)

    certify_parser = sub.add_parser("certify", help="re-certify a stored run")
    certify_parser.add_argument("run_dir", help="run directory holding run.json")
    certify_parser.set_defaults(handler=cmd_certify)

    scenario_parser = sub.add_parser("scenario", help="run a preset scenario ('list' to enumerate)")
    scenario_parser.add_argument("name")
    scenario_parser.add_argument("--param", action="append", default=[],
                                 help="overrides as key=value[,key=value]; ';' separates list entries")
    scenario_parser.set_defaults(handler=cmd_scenario)

    metrics_parser = sub.add_parser("metrics", help="distances between two measure CSVs")
    metrics_parser.add_argument("file_a")
    metrics_parser.add_argument("file_b")
    metrics_parser.set_defaults(handler=cmd_metrics)

    for child in (simulate_parser, dual_parser, certify_parser, scenario_parser, metrics_parser):
        child.add_argument("--output", default=None, help="also write the JSON result to this file")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level, args.log_json or None)
    try:
        code = args.handler(args)
    except argparse.ArgumentTypeError as e:
        parser.error(str(e))
    except DualflowError as e:
        logger.error("Command failed", command=args.command, error=str(e), type=type(e).__name__)
        return EXIT_ERROR
    logger.info("Command finished", command=args.command, exit_code=code)
    return code


if __name__ == "__main__":
    sys.exit(main())
