import argparse
import logging
import os
import sys
import time
from dataclasses import replace
from typing import Optional, Tuple, Union

from pyprojroot import here as project_root

sys.path.insert(0, str(project_root()))

from adaptive_bot.models.tracking_filter import ADAPTATION_MODES, FILTER_FAMILIES, with_settings
from adaptive_bot.utils.campaign_utils import RunMatrix, load_run_matrix
from adaptive_bot.utils.logging import set_up_logging


logger = logging.getLogger(__name__)

OUT_DIR_ENV_VAR = "ADAPTIVE_BOT_OUT_DIR"


def add_campaign_cli_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config",
        type=str,
        default=None,
        help="Campaign INI file. Defaults to the bundled campaign preset.",
    )
    parser.add_argument(
        "--scenario",
        type=int,
        choices=[1, 2],
        action="append",
        help="Scenario to run; repeat for several. Defaults to the config file's list.",
    )
    parser.add_argument(
        "--case",
        type=int,
        choices=[1, 2],
        action="append",
        help="Noise case to run (1: static, 2: range-varying); repeat for several.",
    )
    parser.add_argument(
        "--filter",
        type=str,
        choices=FILTER_FAMILIES,
        action="append",
        help="Filter family to run; repeat for several.",
    )
    parser.add_argument(
        "--mode",
        type=str,
        choices=ADAPTATION_MODES,
        action="append",
        help="Adaptation mode to run; repeat for several.",
    )
    parser.add_argument("--runs", type=int, help="Runs per cell for RMSE, bias and ANEES.")
    parser.add_argument("--track-loss-runs", type=int, help="Runs per cell for track loss.")
    parser.add_argument("--seed", type=int, help="Base seed of the campaign.")
    parser.add_argument(
        "--out",
        type=str,
        default=None,
        help=f"Output directory. Falls back to ${OUT_DIR_ENV_VAR}, then a timestamped directory.",
    )
    parser.add_argument("--num-workers", type=int, help="Worker processes; <= 1 runs in-process.")
    parser.add_argument("--zeta", type=float, help="VB fixed-point convergence tolerance.")
    parser.add_argument("--max-iter", type=int, help="Maximum number of VB iterations per step.")
    parser.add_argument("--window-length", type=int, help="MAPMLE residual window length.")
    parser.add_argument("--ghf-order", type=int, help="Gauss-Hermite nodes per axis.")
    parser.add_argument("--ukf-kappa", type=float, help="UKF kappa; default 3 - n.")
    parser.add_argument(
        "--write-run-diagnostics",
        type=str2bool,
        nargs="?",
        const=True,
        default=False,
        help="Also write runs.csv with per-run, per-step diagnostics.",
    )


def _tuple_or(values: Optional[list], default: tuple) -> tuple:
    return default if not values else tuple(dict.fromkeys(values))


def run_matrix_from_args(args: argparse.Namespace) -> RunMatrix:
    """Campaign config file with the command line flags applied on top."""
    matrix = load_run_matrix(args.config)
    settings = with_settings(
        matrix.filter_settings,
        zeta=args.zeta,
        max_iter=args.max_iter,
        window_length=args.window_length,
        ghf_order=args.ghf_order,
        ukf_kappa=args.ukf_kappa,
    )
    overrides = {
        "runs": args.runs,
        "track_loss_runs": args.track_loss_runs,
        "base_seed": args.seed,
        "num_workers": args.num_workers,
    }
    # A run count on the command line sets both counts unless the track loss count is also given.
    if args.runs is not None and args.track_loss_runs is None:
        overrides["track_loss_runs"] = args.runs

    return replace(
        matrix,
        scenarios=_tuple_or(args.scenario, matrix.scenarios),
        cases=_tuple_or(args.case, matrix.cases),
        families=_tuple_or(args.filter, matrix.families),
        modes=_tuple_or(args.mode, matrix.modes),
        filter_settings=settings,
        write_run_diagnostics=args.write_run_diagnostics,
        **{key: value for key, value in overrides.items() if value is not None},
    )


def resolve_out_dir(out: Optional[str]) -> str:
    if out:
        return out
    env_out_dir = os.environ.get(OUT_DIR_ENV_VAR)
    if env_out_dir:
        return env_out_dir
    return os.path.join("outputs", f"AdaptiveBOT_{time.strftime('%Y-%m-%d_%H-%M-%S')}")


def set_up_campaign_run(args: argparse.Namespace) -> Tuple[str, RunMatrix]:
    matrix = run_matrix_from_args(args)
    out_dir = resolve_out_dir(args.out)
    os.makedirs(out_dir, exist_ok=True)
    set_up_logging(os.path.join(out_dir, "campaign.log"))

    logger.info(f"Starting campaign run in {out_dir}.")
    logger.info(f"\tArguments: {args}")
    logger.info(f"\tScenarios: {matrix.scenarios}, cases: {matrix.cases}")
    logger.info(f"\tVariants: {', '.join(v.name for v in matrix.variants)}")
    logger.info(f"\tFilter settings: {matrix.filter_settings}")
    return out_dir, matrix


def str2bool(v: Union[str, bool]) -> bool:
    if isinstance(v, bool):
        return v
    if v.lower() in ("yes", "true", "t", "y", "1"):
        return True
    elif v.lower() in ("no", "false", "f", "n", "0"):
        return False
    else:
        raise argparse.ArgumentTypeError("Boolean value expected.")
