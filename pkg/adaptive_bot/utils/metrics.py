from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import stats


DEFAULT_TRACK_BOUND_KM = 0.2


class NoSurvivingRunsError(ValueError):
    def __init__(self, num_runs: int):
        super().__init__()
        self.num_runs = num_runs

    def __str__(self):
        return f"All {self.num_runs} runs diverged; nothing left to evaluate."


class MissingBaselineError(KeyError):
    def __init__(self, baseline: str, available: Iterable[str]):
        super().__init__(baseline)
        self.baseline = baseline
        self.available = tuple(available)

    def __str__(self):
        return f"Baseline {self.baseline!r} missing from timings of {list(self.available)}."


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    """Monte Carlo results of one filter variant on one scenario cell.

    Args:
        position_errors: Euclidean position error per run and step, shape [M, K].
        velocity_errors: Euclidean velocity error per run and step, shape [M, K].
        estimates: state estimates, shape [M, K, n].
        truths: true states, shape [M, K, n].
        nees: NEES per run and step, shape [M, K] (NaN where P was singular or after divergence).
        wall_times: filter loop wall time per run in seconds, shape [M].
        diverged_numerically: flag per run, shape [M].
    """

    position_errors: np.ndarray
    velocity_errors: np.ndarray
    estimates: np.ndarray
    truths: np.ndarray
    nees: np.ndarray
    wall_times: np.ndarray
    diverged_numerically: np.ndarray

    @staticmethod
    def from_records(records: Sequence) -> "EnsembleResult":
        """Stack RunRecords (anything with the RunRecord attributes) into ensemble arrays."""
        if len(records) == 0:
            raise NoSurvivingRunsError(0)
        return EnsembleResult(
            position_errors=np.stack([r.position_errors for r in records]),
            velocity_errors=np.stack([r.velocity_errors for r in records]),
            estimates=np.stack([r.estimates for r in records]),
            truths=np.stack([r.truth for r in records]),
            nees=np.stack([r.nees for r in records]),
            wall_times=np.array([r.wall_time for r in records]),
            diverged_numerically=np.array([r.diverged_numerically for r in records], dtype=bool),
        )

    @property
    def num_runs(self) -> int:
        return self.position_errors.shape[0]

    @property
    def state_dim(self) -> int:
        return self.estimates.shape[-1]

    @property
    def terminal_position_errors(self) -> np.ndarray:
        return self.position_errors[:, -1]

    def lost_mask(self, bound: float = DEFAULT_TRACK_BOUND_KM) -> np.ndarray:
        """Runs excluded from the error metrics: track lost, non-finite or numerically diverged."""
        terminal = self.terminal_position_errors
        return self.diverged_numerically | ~np.isfinite(terminal) | (terminal > bound)

    def subset(self, num_runs: int) -> "EnsembleResult":
        return EnsembleResult(
            position_errors=self.position_errors[:num_runs],
            velocity_errors=self.velocity_errors[:num_runs],
            estimates=self.estimates[:num_runs],
            truths=self.truths[:num_runs],
            nees=self.nees[:num_runs],
            wall_times=self.wall_times[:num_runs],
            diverged_numerically=self.diverged_numerically[:num_runs],
        )


def _surviving(mask: Optional[np.ndarray], num_runs: int) -> np.ndarray:
    keep = np.ones(num_runs, dtype=bool) if mask is None else ~np.asarray(mask, dtype=bool)
    if not keep.any():
        raise NoSurvivingRunsError(num_runs)
    return keep


def rmse(errors: np.ndarray, diverged: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-step root mean square of the error norms over the runs not flagged in `diverged`.

    Args:
        errors: error norm per run and step, shape [M, K].
        diverged: boolean mask of shape [M] of runs to exclude.
    """
    errors = np.atleast_2d(np.asarray(errors, dtype=np.float64))
    keep = _surviving(diverged, errors.shape[0])
    return np.sqrt(np.mean(errors[keep] ** 2, axis=0))


def track_loss_pct(
    terminal_errors: Sequence[float], bound: float = DEFAULT_TRACK_BOUND_KM
) -> float:
    """Percentage of runs whose terminal position error exceeds `bound` (NaN counts as lost)."""
    if not bound > 0:
        raise ValueError(f"Track loss bound must be positive, got {bound}.")
    terminal_errors = np.asarray(terminal_errors, dtype=np.float64)
    if terminal_errors.size == 0:
        return 0.0
    lost = ~np.isfinite(terminal_errors) | (terminal_errors > bound)
    return 100.0 * float(np.mean(lost))


def bias_norm(
    estimates: np.ndarray, truths: np.ndarray, diverged: Optional[np.ndarray] = None
) -> np.ndarray:
    """Per-step norm of the difference between the mean estimate and the mean truth.

    Args:
        estimates: shape [M, K, n].
        truths: shape [M, K, n].
        diverged: boolean mask of shape [M] of runs to exclude.
    """
    estimates, truths = np.asarray(estimates), np.asarray(truths)
    keep = _surviving(diverged, estimates.shape[0])
    mean_diff = estimates[keep].mean(axis=0) - truths[keep].mean(axis=0)
    return np.linalg.norm(mean_diff, axis=-1)


def compute_nees(truth: np.ndarray, estimates: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """NEES (x - x_hat)^T P^-1 (x - x_hat) per step; NaN where P is singular or not finite.

    Args:
        truth: shape [K, n].
        estimates: shape [K, n].
        covs: shape [K, n, n].
    """
    errors = np.asarray(truth) - np.asarray(estimates)
    nees = np.full(errors.shape[0], np.nan)
    for k, (error, cov) in enumerate(zip(errors, covs)):
        if not (np.all(np.isfinite(error)) and np.all(np.isfinite(cov))):
            continue
        try:
            nees[k] = float(error @ np.linalg.solve(cov, error))
        except np.linalg.LinAlgError:
            continue
    return nees


def anees_bounds(n: int, num_runs: int, probability: float = 0.95) -> Tuple[float, float]:
    """Two-sided chi-square acceptance region for the ANEES of `num_runs` runs in dimension n."""
    dof = n * num_runs
    tail = (1.0 - probability) / 2.0
    return (
        float(stats.chi2.ppf(tail, dof) / dof),
        float(stats.chi2.ppf(1.0 - tail, dof) / dof),
    )


@dataclass(frozen=True)
class AneesResult:
    values: np.ndarray
    lower_bound: float
    upper_bound: float
    num_runs: int

    def fraction_within_bounds(self, start_step: int = 0) -> float:
        values = self.values[start_step:]
        return float(np.mean((values >= self.lower_bound) & (values <= self.upper_bound)))


def anees(nees: np.ndarray, n: int, diverged: Optional[np.ndarray] = None) -> AneesResult:
    """Per-step average NEES normalized by the state dimension, with its 95% bounds.

    Runs with a NaN NEES at any step (singular covariance) are excluded as well.
    """
    if n < 1:
        raise ValueError(f"State dimension must be at least 1, got {n}.")
    nees = np.atleast_2d(np.asarray(nees, dtype=np.float64))
    keep = _surviving(diverged, nees.shape[0]) & np.all(np.isfinite(nees), axis=1)
    num_runs = int(keep.sum())
    if num_runs == 0:
        raise NoSurvivingRunsError(nees.shape[0])
    lower, upper = anees_bounds(n, num_runs)
    return AneesResult(
        values=nees[keep].sum(axis=0) / (n * num_runs),
        lower_bound=lower,
        upper_bound=upper,
        num_runs=num_runs,
    )


def relative_execution_time(
    wall_times: Dict[str, Sequence[float]], baseline: str = "ekf/nonadaptive"
) -> Dict[str, float]:
    """Mean wall time of each filter divided by the mean wall time of the baseline filter."""
    if baseline not in wall_times:
        raise MissingBaselineError(baseline, wall_times.keys())
    baseline_time = float(np.mean(wall_times[baseline]))
    if not baseline_time > 0:
        raise ValueError(f"Baseline {baseline!r} has non-positive mean wall time {baseline_time}.")
    return {name: float(np.mean(times)) / baseline_time for name, times in wall_times.items()}


@dataclass(frozen=True)
class CellMetrics:
    """Terminal-step summary of one filter variant on one scenario cell."""

    track_loss_pct: float
    rmse_pos: float
    rmse_vel: float
    bias_norm: float
    anees: float
    anees_lower: float
    anees_upper: float
    num_runs: int
    num_track_loss_runs: int
    num_surviving: int
    num_numerically_diverged: int
    mean_wall_time_s: float


def _unless_all_lost(fn, *args):
    try:
        return fn(*args)
    except NoSurvivingRunsError:
        return None


def compute_cell_metrics(
    ensemble: EnsembleResult,
    num_runs: int,
    num_track_loss_runs: int,
    bound: float = DEFAULT_TRACK_BOUND_KM,
) -> Tuple[CellMetrics, Dict[str, np.ndarray]]:
    """Terminal summary and per-step series for one cell.

    Error metrics use the first `num_runs` runs, track loss the first `num_track_loss_runs`.
    Series are NaN when no run survived.
    """
    track_loss = track_loss_pct(
        ensemble.subset(num_track_loss_runs).terminal_position_errors, bound
    )
    error_runs = ensemble.subset(num_runs)
    lost = error_runs.lost_mask(bound)
    num_steps = error_runs.position_errors.shape[1]
    nan_series = np.full(num_steps, np.nan)

    rmse_pos = _unless_all_lost(rmse, error_runs.position_errors, lost)
    rmse_vel = _unless_all_lost(rmse, error_runs.velocity_errors, lost)
    bias = _unless_all_lost(bias_norm, error_runs.estimates, error_runs.truths, lost)
    anees_result = _unless_all_lost(anees, error_runs.nees, error_runs.state_dim, lost)

    series = {
        "rmse_pos": nan_series if rmse_pos is None else rmse_pos,
        "rmse_vel": nan_series if rmse_vel is None else rmse_vel,
        "bias_norm": nan_series if bias is None else bias,
        "anees": nan_series if anees_result is None else anees_result.values,
    }
    metrics = CellMetrics(
        track_loss_pct=track_loss,
        rmse_pos=float(series["rmse_pos"][-1]),
        rmse_vel=float(series["rmse_vel"][-1]),
        bias_norm=float(series["bias_norm"][-1]),
        anees=float(series["anees"][-1]),
        anees_lower=np.nan if anees_result is None else anees_result.lower_bound,
        anees_upper=np.nan if anees_result is None else anees_result.upper_bound,
        num_runs=error_runs.num_runs,
        num_track_loss_runs=min(num_track_loss_runs, ensemble.num_runs),
        num_surviving=int((~lost).sum()),
        num_numerically_diverged=int(error_runs.diverged_numerically.sum()),
        mean_wall_time_s=float(np.mean(error_runs.wall_times)),
    )
    return metrics, series
