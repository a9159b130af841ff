"""
Command line entry point: `python -m adaptive_bot.campaign run|oracle|show-config`.
"""
import argparse
import logging
import sys
from dataclasses import fields
from typing import List, Optional

from dpu_utils.utils import run_and_debug
from pyprojroot import here as project_root

sys.path.insert(0, str(project_root()))

from adaptive_bot.data.scenario import resolve_noise_case
from adaptive_bot.data.scenario_config import (
    SCENARIO_PRESETS,
    describe_scenario_config,
    load_scenario_config,
)
from adaptive_bot.utils.campaign_utils import load_run_matrix, run_campaign
from adaptive_bot.utils.cli_utils import add_campaign_cli_args, set_up_campaign_run
from adaptive_bot.utils.logging import set_up_logging
from adaptive_bot.utils.oracles import format_provenance_table, run_oracles


logger = logging.getLogger(__name__)


def run_from_args(args: argparse.Namespace) -> int:
    out_dir, matrix = set_up_campaign_run(args)
    outputs = run_campaign(matrix, out_dir)
    logger.info(f"Campaign finished, {len(outputs.results)} summary rows.")
    return 0


def oracle_from_args(args: argparse.Namespace) -> int:
    set_up_logging(console_level=logging.DEBUG if args.verbose else logging.INFO)
    checks = run_oracles(
        monte_carlo=args.monte_carlo, num_runs=(args.anees_runs, args.bias_runs)
    )
    print(format_provenance_table(checks))
    num_failed = sum(not check.passed for check in checks)
    if num_failed > 0:
        logger.error(f"{num_failed} of {len(checks)} oracle checks failed.")
        return 1
    return 0


def show_config_from_args(args: argparse.Namespace) -> int:
    set_up_logging()
    cfg = resolve_noise_case(load_scenario_config(args.preset, args.case))
    lines = describe_scenario_config(cfg)

    matrix = load_run_matrix(args.config)
    lines.append("Campaign")
    for matrix_field in fields(matrix):
        if matrix_field.name in ("filter_settings", "scenario_sources"):
            continue
        lines.append(f"  {matrix_field.name + ':':<24}{getattr(matrix, matrix_field.name)}")
    lines.append("Filter settings")
    for settings_field in fields(matrix.filter_settings):
        value = getattr(matrix.filter_settings, settings_field.name)
        if settings_field.name == "ukf_kappa" and value is None:
            value = "3 - n"
        lines.append(f"  {settings_field.name + ':':<24}{value}")

    print("\n".join(lines))
    return 0


def parse_command_line(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description="Monte Carlo evaluation of adaptive bearings-only tracking filters.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--debug", dest="debug", action="store_true", help="Enable debug routines")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run_parser = subparsers.add_parser(
        "run",
        help="Run a campaign and write summary.csv and timeseries.csv.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    add_campaign_cli_args(run_parser)
    run_parser.set_defaults(func=run_from_args)

    oracle_parser = subparsers.add_parser(
        "oracle",
        help="Check the filters against independently derived values.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    oracle_parser.add_argument(
        "--monte-carlo",
        action="store_true",
        help="Also run the linear-Gaussian consistency and bias checks (slow).",
    )
    oracle_parser.add_argument("--anees-runs", type=int, default=500, help="Runs for ANEES.")
    oracle_parser.add_argument("--bias-runs", type=int, default=2000, help="Runs per bias check.")
    oracle_parser.add_argument("--verbose", action="store_true", help="Log every check.")
    oracle_parser.set_defaults(func=oracle_from_args)

    show_parser = subparsers.add_parser(
        "show-config",
        help="Print a resolved scenario preset and the campaign settings.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    show_parser.add_argument(
        "--preset",
        type=str,
        default=SCENARIO_PRESETS[0],
        help=f"Scenario preset name ({', '.join(SCENARIO_PRESETS)}) or path to an INI file.",
    )
    show_parser.add_argument("--case", type=int, choices=[1, 2], default=1, help="Noise case.")
    show_parser.add_argument("--config", type=str, default=None, help="Campaign INI file.")
    show_parser.set_defaults(func=show_config_from_args)

    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_command_line(argv)
    exit_codes = []
    run_and_debug(lambda: exit_codes.append(args.func(args)), args.debug)
    return exit_codes[0] if exit_codes else 1


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
