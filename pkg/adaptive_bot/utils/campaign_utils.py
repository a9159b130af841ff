"""
Monte Carlo campaign over scenario x noise case x filter variant, and the CSV writers for its
results. See docs/formats.md for the output schemas.
"""
import csv
import hashlib
import logging
import os
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from more_itertools import chunked
from tqdm import tqdm

from adaptive_bot.data.scenario import (
    ScenarioConfig,
    initial_belief,
    resolve_noise_case,
    simulate_truth,
)
from adaptive_bot.data.scenario_config import (
    CAMPAIGN_PRESET,
    ConfigError,
    NamedConfigParser,
    get_bool,
    get_float,
    get_int,
    get_list,
    get_optional_float,
    get_str,
    load_scenario_config,
    preset_path,
    read_config,
)
from adaptive_bot.models.tracking_filter import (
    BASELINE_VARIANT,
    FILTER_FAMILIES,
    HEADLINE_MODES,
    FilterSettings,
    FilterVariant,
    NoiseTruth,
    RunRecord,
    run_filter,
    variants_for,
)
from adaptive_bot.modules.filter_core import ProcessModel
from adaptive_bot.modules.moments import NumericalDivergenceError
from adaptive_bot.utils.logging import (
    PROGRESS_LOG_LEVEL,
    FileLikeLogger,
    prefix_log_msgs,
    restrict_console_log_level,
)
from adaptive_bot.utils.metric_logger import MetricLogger
from adaptive_bot.utils.metrics import (
    DEFAULT_TRACK_BOUND_KM,
    CellMetrics,
    EnsembleResult,
    MissingBaselineError,
    compute_cell_metrics,
    relative_execution_time,
)
from adaptive_bot.utils.worker_pool import get_worker_pool


logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.csv"
TIMESERIES_FILE = "timeseries.csv"
RUNS_FILE = "runs.csv"

FLOAT_FORMAT = "%.10g"
RUNS_PER_TASK = 10


@dataclass(frozen=True)
class RunMatrix:
    """Everything a campaign needs: which cells and variants to run, and how often."""

    scenarios: Tuple[int, ...] = (1, 2)
    cases: Tuple[int, ...] = (1, 2)
    families: Tuple[str, ...] = FILTER_FAMILIES
    modes: Tuple[str, ...] = HEADLINE_MODES
    runs: int = 500
    track_loss_runs: int = 2000
    base_seed: int = 0
    num_workers: int = 0
    track_bound: float = DEFAULT_TRACK_BOUND_KM
    filter_settings: FilterSettings = FilterSettings()
    write_run_diagnostics: bool = False
    scenario_sources: Dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError(f"Need at least one run per cell, got runs={self.runs}.")
        if self.track_loss_runs < 1:
            raise ValueError(f"Need at least one track loss run, got {self.track_loss_runs}.")
        if not self.track_bound > 0:
            raise ValueError(f"Track loss bound must be positive, got {self.track_bound}.")
        # Raises on unknown families or modes.
        self.variants

    @property
    def variants(self) -> Tuple[FilterVariant, ...]:
        return variants_for(self.families, self.modes)

    @property
    def runs_per_cell(self) -> int:
        return max(self.runs, self.track_loss_runs)

    @property
    def cells(self) -> List[Tuple[int, int]]:
        return [(scenario, case) for scenario in self.scenarios for case in self.cases]

    def scenario_source(self, scenario: int) -> str:
        return self.scenario_sources.get(scenario, f"scenario{scenario}")


def _parse_ints(parser: NamedConfigParser, section: str, key: str) -> Tuple[int, ...]:
    try:
        return tuple(int(item) for item in get_list(parser, section, key))
    except ValueError:
        raise ConfigError(parser.filename, section, key, "expected integers") from None


def _grid(parser: NamedConfigParser, name: str, low: int, high: int) -> Tuple[float, ...]:
    grid_min = get_int(parser, "vb", f"{name}_grid_min", low)
    grid_max = get_int(parser, "vb", f"{name}_grid_max", high)
    if grid_max < grid_min:
        raise ConfigError(parser.filename, "vb", f"{name}_grid_max", "grid is empty")
    return tuple(float(v) for v in range(grid_min, grid_max + 1))


def _mapmle_estimator(parser: NamedConfigParser) -> str:
    estimator = get_str(parser, "mapmle", "estimator", "residual")
    if estimator not in ("residual", "innovation"):
        raise ConfigError(parser.filename, "mapmle", "estimator", "expected residual or innovation")
    return estimator


def load_filter_settings(parser: NamedConfigParser) -> FilterSettings:
    defaults = FilterSettings()
    r_denominator = get_str(parser, "vb", "r_denominator", defaults.r_denominator)
    if r_denominator not in ("main", "appendix"):
        raise ConfigError(parser.filename, "vb", "r_denominator", "expected main or appendix")

    return FilterSettings(
        zeta=get_float(parser, "vb", "zeta", defaults.zeta),
        max_iter=get_int(parser, "vb", "max_iter", defaults.max_iter),
        alpha_prime=get_float(parser, "vb", "alpha_prime", defaults.alpha_prime),
        dof_prior=get_float(parser, "vb", "dof_prior", defaults.dof_prior),
        dof_grid=_grid(parser, "dof", 3, 23),
        alpha_grid=_grid(parser, "alpha", 1, 20),
        r_denominator=r_denominator,  # type: ignore[arg-type]
        window_length=get_int(parser, "mapmle", "window_length", defaults.window_length),
        remove_residual_mean=get_bool(parser, "mapmle", "remove_residual_mean", False),
        mapmle_estimator=_mapmle_estimator(parser),  # type: ignore[arg-type]
        ghf_order=get_int(parser, "moments", "ghf_order", defaults.ghf_order),
        ukf_kappa=get_optional_float(parser, "moments", "ukf_kappa"),
        noise_mean_factor=get_float(parser, "guess", "noise_mean_factor", 0.5),
        noise_covariance_factor=get_float(parser, "guess", "noise_covariance_factor", 0.5),
    )


def load_run_matrix(config_path: Optional[str] = None) -> RunMatrix:
    """Read a campaign INI file (the bundled campaign preset by default)."""
    parser = read_config(config_path or preset_path(CAMPAIGN_PRESET))
    defaults = RunMatrix()
    return RunMatrix(
        scenarios=_parse_ints(parser, "campaign", "scenarios"),
        cases=_parse_ints(parser, "campaign", "cases"),
        families=tuple(get_list(parser, "campaign", "filters")),
        modes=tuple(get_list(parser, "campaign", "modes")),
        runs=get_int(parser, "campaign", "runs", defaults.runs),
        track_loss_runs=get_int(parser, "campaign", "track_loss_runs", defaults.track_loss_runs),
        base_seed=get_int(parser, "campaign", "base_seed", defaults.base_seed),
        num_workers=get_int(parser, "campaign", "num_workers", defaults.num_workers),
        track_bound=get_float(parser, "campaign", "track_bound_km", defaults.track_bound),
        filter_settings=load_filter_settings(parser),
    )


def run_seed(base_seed: int, scenario: int, case: int, run_index: int) -> int:
    """Seed of one run of a cell. Independent of the filter, so all variants see the same data."""
    digest = hashlib.sha256(f"{scenario}/{case}/{run_index}".encode("utf-8")).hexdigest()
    return (base_seed ^ int(digest[:16], 16)) & 0x7FFF_FFFF_FFFF_FFFF


@dataclass(frozen=True)
class RunTask:
    scenario_cfg: ScenarioConfig
    run_indices: Tuple[int, ...]
    seeds: Tuple[int, ...]
    variants: Tuple[FilterVariant, ...]
    settings: FilterSettings


def simulate_single_run(
    cfg: ScenarioConfig,
    seed: int,
    variants: Sequence[FilterVariant],
    settings: FilterSettings,
) -> List[RunRecord]:
    """Simulate one run and apply every variant to the same truth and measurements."""
    rng = np.random.default_rng(seed)
    truth = simulate_truth(cfg, rng)
    try:
        initial = initial_belief(truth.measured_bearing[0], cfg, truth.ownship_at(0), rng)
    except NumericalDivergenceError as e:
        logger.info(f"Run with seed {seed} has no valid initial belief: {e}")
        return [RunRecord.failed(v.name, seed, truth.relative) for v in variants]

    process_model = ProcessModel.from_ownship(cfg.delta_min, cfg.q_bar, truth.ownship)
    noise_truth = NoiseTruth(mean=cfg.r_m_true, sigma=truth.sigma_theta)
    return [
        run_filter(
            variant,
            truth.relative,
            truth.measured_bearing,
            initial,
            process_model,
            noise_truth,
            settings,
            seed=seed,
        )
        for variant in variants
    ]


def simulate_runs(task: RunTask) -> List[Tuple[int, List[RunRecord]]]:
    with restrict_console_log_level(logging.WARNING):
        return [
            (run_index, simulate_single_run(task.scenario_cfg, seed, task.variants, task.settings))
            for run_index, seed in zip(task.run_indices, task.seeds)
        ]


@dataclass(frozen=True, eq=False)
class CellResult:
    scenario: int
    case: int
    variant: FilterVariant
    metrics: CellMetrics
    series: Dict[str, np.ndarray]
    records: List[RunRecord]
    rel_time: float = float("nan")

    @property
    def median_iterations(self) -> float:
        iterations = np.concatenate([r.iterations[1:] for r in self.records])
        iterations = iterations[iterations > 0]
        return float(np.median(iterations)) if iterations.size else float("nan")

    @property
    def max_iter_hits_pct(self) -> float:
        counted = sum(int(np.sum(r.iterations[1:] > 0)) for r in self.records)
        hits = sum(r.nonconverged_steps for r in self.records)
        return 100.0 * hits / counted if counted else float("nan")


def _noise_statistic_series(records: Sequence[RunRecord], num_runs: int) -> Dict[str, np.ndarray]:
    surviving = [r for r in records[:num_runs] if not r.diverged_numerically]
    if not surviving:
        nan_series = np.full(records[0].num_steps, np.nan)
        return {"mean_R_hat": nan_series, "mean_mu_hat": nan_series}
    return {
        "mean_R_hat": np.mean([r.R_hat for r in surviving], axis=0),
        "mean_mu_hat": np.mean([r.mu_hat for r in surviving], axis=0),
    }


def _evaluate_cell(
    matrix: RunMatrix, scenario: int, case: int, records_by_variant: Dict[str, List[RunRecord]]
) -> List[CellResult]:
    results = []
    for variant in matrix.variants:
        records = records_by_variant[variant.name]
        ensemble = EnsembleResult.from_records(records)
        metrics, series = compute_cell_metrics(
            ensemble, matrix.runs, matrix.track_loss_runs, matrix.track_bound
        )
        series.update(_noise_statistic_series(records, matrix.runs))
        results.append(CellResult(scenario, case, variant, metrics, series, records))

    wall_times = {
        r.variant.name: [rec.wall_time for rec in r.records[: matrix.runs]] for r in results
    }
    try:
        ratios = relative_execution_time(wall_times, BASELINE_VARIANT)
    except (MissingBaselineError, ValueError) as e:
        logger.warning(f"Relative times are left empty: {e}")
        return results
    return [replace(r, rel_time=ratios[r.variant.name]) for r in results]


def run_cell(
    matrix: RunMatrix, scenario: int, case: int, cfg: Optional[ScenarioConfig] = None
) -> List[CellResult]:
    """Run all variants of the matrix on one (scenario, case) cell."""
    if cfg is None:
        cfg = load_scenario_config(matrix.scenario_source(scenario), case)
    cfg = resolve_noise_case(cfg)

    run_indices = range(matrix.runs_per_cell)
    tasks = [
        RunTask(
            scenario_cfg=cfg,
            run_indices=tuple(chunk),
            seeds=tuple(run_seed(matrix.base_seed, scenario, case, i) for i in chunk),
            variants=matrix.variants,
            settings=matrix.filter_settings,
        )
        for chunk in chunked(run_indices, RUNS_PER_TASK)
    ]

    records_by_variant: Dict[str, List[RunRecord]] = defaultdict(list)
    metric_logger = MetricLogger(window_size=100, log_fn=logger.info)
    with get_worker_pool(matrix.num_workers) as pool:
        progress = tqdm(
            total=len(run_indices),
            desc=f"Scenario {scenario} case {case}",
            file=FileLikeLogger(logger, PROGRESS_LOG_LEVEL),
            mininterval=10.0,
        )
        # imap keeps task order, so the records do not depend on the number of workers.
        for task_results in pool.imap(simulate_runs, tasks):
            for _, run_records in task_results:
                for record in run_records:
                    records_by_variant[record.variant].append(record)
                _log_run(metric_logger, run_records, matrix.track_bound)
                progress.update(1)
        progress.close()

    return _evaluate_cell(matrix, scenario, case, records_by_variant)


def _log_run(metric_logger: MetricLogger, run_records: Sequence[RunRecord], bound: float) -> None:
    metrics = {}
    for record in run_records:
        terminal = record.terminal_position_error
        metrics[f"{record.variant}_lost"] = float(not np.isfinite(terminal) or terminal > bound)
        metrics[f"{record.variant}_terminal_err"] = terminal
        vb_steps = record.iterations[1:][record.iterations[1:] > 0]
        if vb_steps.size:
            metrics[f"{record.variant}_vb_iter"] = float(np.mean(vb_steps))
    metric_logger.log_metrics(**metrics)


SUMMARY_COLUMNS = [
    "scenario",
    "case",
    "filter",
    "mode",
    "variant",
    "runs",
    "track_loss_runs",
    "track_loss_pct",
    "rmse_pos_km",
    "rmse_vel_km_min",
    "bias_norm",
    "anees",
    "anees_b1",
    "anees_b2",
    "surviving_runs",
    "numerically_diverged",
    "kappa_fallbacks",
    "median_vb_iterations",
    "max_iter_hits_pct",
    "window_length",
    "ghf_order",
    "rel_time",
    "mean_wall_time_s",
]


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % value
    return str(value)


def summary_row(result: CellResult, matrix: RunMatrix) -> Dict[str, str]:
    metrics = result.metrics
    is_vb = result.variant.mode in ("vb", "vb_tuned")
    row = {
        "scenario": result.scenario,
        "case": result.case,
        "filter": result.variant.family,
        "mode": result.variant.mode,
        "variant": result.variant.display_name,
        "runs": metrics.num_runs,
        "track_loss_runs": metrics.num_track_loss_runs,
        "track_loss_pct": metrics.track_loss_pct,
        "rmse_pos_km": metrics.rmse_pos,
        "rmse_vel_km_min": metrics.rmse_vel,
        "bias_norm": metrics.bias_norm,
        "anees": metrics.anees,
        "anees_b1": metrics.anees_lower,
        "anees_b2": metrics.anees_upper,
        "surviving_runs": metrics.num_surviving,
        "numerically_diverged": metrics.num_numerically_diverged,
        "kappa_fallbacks": sum(r.kappa_fallback for r in result.records),
        "median_vb_iterations": result.median_iterations if is_vb else float("nan"),
        "max_iter_hits_pct": result.max_iter_hits_pct if is_vb else float("nan"),
        "window_length": matrix.filter_settings.window_length,
        "ghf_order": matrix.filter_settings.ghf_order,
        "rel_time": result.rel_time,
        "mean_wall_time_s": metrics.mean_wall_time_s,
    }
    return {key: _fmt(value) for key, value in row.items()}


def write_csv_summary(output_csv_file: str, results: Sequence[CellResult], matrix: RunMatrix):
    with open(output_csv_file, "w", newline="") as csv_file:
        csv_writer = csv.DictWriter(csv_file, fieldnames=SUMMARY_COLUMNS)
        csv_writer.writeheader()
        for result in results:
            csv_writer.writerow(summary_row(result, matrix))


def timeseries_frame(results: Sequence[CellResult], times: Dict[int, np.ndarray]) -> pd.DataFrame:
    frames = []
    for result in results:
        series = result.series
        num_steps = series["rmse_pos"].shape[0]
        frames.append(
            pd.DataFrame(
                {
                    "scenario": result.scenario,
                    "case": result.case,
                    "filter": result.variant.family,
                    "mode": result.variant.mode,
                    "step": np.arange(num_steps),
                    "time_min": times[result.scenario][:num_steps],
                    "rmse_pos_km": series["rmse_pos"],
                    "rmse_vel_km_min": series["rmse_vel"],
                    "bias_norm": series["bias_norm"],
                    "anees": series["anees"],
                    "anees_b1": result.metrics.anees_lower,
                    "anees_b2": result.metrics.anees_upper,
                    "mean_R_hat": series["mean_R_hat"],
                    "mean_mu_hat": series["mean_mu_hat"],
                    "sigma_theta_hat": np.sqrt(series["mean_R_hat"]),
                }
            )
        )
    return pd.concat(frames, ignore_index=True)


def runs_frame(results: Sequence[CellResult]) -> pd.DataFrame:
    frames = []
    for result in results:
        for run_index, record in enumerate(result.records):
            steps = np.arange(record.num_steps)
            frames.append(
                pd.DataFrame(
                    {
                        "scenario": result.scenario,
                        "case": result.case,
                        "filter": result.variant.family,
                        "mode": result.variant.mode,
                        "run": run_index,
                        "seed": str(record.seed),
                        "step": steps,
                        "x": record.estimates[:, 0],
                        "y": record.estimates[:, 1],
                        "vx": record.estimates[:, 2],
                        "vy": record.estimates[:, 3],
                        "P_xx": record.cov_diag[:, 0],
                        "P_yy": record.cov_diag[:, 1],
                        "P_vxvx": record.cov_diag[:, 2],
                        "P_vyvy": record.cov_diag[:, 3],
                        "R_hat": record.R_hat,
                        "mu_hat": record.mu_hat,
                        "iterations": record.iterations,
                        "alpha_prime": record.alpha_prime,
                        "dof_prior": record.dof_prior,
                        "nees": record.nees,
                        "diverged_numerically": record.diverged_numerically,
                        "divergence_step": -1
                        if record.divergence_step is None
                        else record.divergence_step,
                    }
                )
            )
    return pd.concat(frames, ignore_index=True)


@dataclass(frozen=True)
class CampaignOutputs:
    summary_path: str
    timeseries_path: str
    runs_path: Optional[str]
    results: Tuple[CellResult, ...]


def run_campaign(matrix: RunMatrix, out_dir: str) -> CampaignOutputs:
    """Run every cell of the matrix and write the summary, time series and optional per-run CSVs."""
    os.makedirs(out_dir, exist_ok=True)
    logger.info(
        f"Starting campaign: {len(matrix.cells)} cells x {len(matrix.variants)} variants, "
        f"{matrix.runs_per_cell} runs per cell, base seed {matrix.base_seed}."
    )

    all_results: List[CellResult] = []
    times: Dict[int, np.ndarray] = {}
    for scenario, case in matrix.cells:
        cfg = load_scenario_config(matrix.scenario_source(scenario), case)
        times[scenario] = cfg.times()
        with prefix_log_msgs(f" Scenario {scenario} - Case {case} -"):
            cell_results = run_cell(matrix, scenario, case, cfg)
            for result in cell_results:
                logger.info(
                    f"{result.variant.display_name}:"
                    f" track loss {result.metrics.track_loss_pct:.2f}%,"
                    f" terminal RMSE {result.metrics.rmse_pos:.4f} km,"
                    f" ANEES {result.metrics.anees:.3f}, rel. time {result.rel_time:.2f}"
                )
        if not matrix.write_run_diagnostics:
            # Per-run arrays are only needed for runs.csv.
            cell_results = [
                replace(r, records=[_strip_record(rec) for rec in r.records]) for r in cell_results
            ]
        all_results.extend(cell_results)

    summary_path = os.path.join(out_dir, SUMMARY_FILE)
    write_csv_summary(summary_path, all_results, matrix)
    timeseries_path = os.path.join(out_dir, TIMESERIES_FILE)
    timeseries_frame(all_results, times).to_csv(
        timeseries_path, index=False, float_format=FLOAT_FORMAT
    )

    runs_path = None
    if matrix.write_run_diagnostics:
        runs_path = os.path.join(out_dir, RUNS_FILE)
        runs_frame(all_results).to_csv(runs_path, index=False, float_format=FLOAT_FORMAT)

    logger.info(f"Wrote {summary_path} and {timeseries_path}.")
    if runs_path is not None:
        logger.info(f"Wrote per-run diagnostics to {runs_path}.")
    return CampaignOutputs(summary_path, timeseries_path, runs_path, tuple(all_results))


def _strip_record(record: RunRecord) -> RunRecord:
    """Keep only what the summary needs: iterations, flags and wall time."""
    return replace(
        record,
        truth=record.truth[-1:],
        estimates=record.estimates[-1:],
        cov_diag=record.cov_diag[-1:],
        nees=record.nees[-1:],
        R_hat=record.R_hat[-1:],
        mu_hat=record.mu_hat[-1:],
        alpha_prime=record.alpha_prime[-1:],
    )
