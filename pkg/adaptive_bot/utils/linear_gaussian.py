"""
Monte Carlo runs of the filter variants on a linear-Gaussian surrogate of the tracking problem.

The state follows the same constant-velocity model as the bearings-only scenarios (without ownship
inputs) and is observed through a scalar linear measurement y = a . x + v, v ~ N(r_m, sigma^2).
With the true noise statistics the nonadaptive filters are exact Kalman filters, which makes the
surrogate useful for consistency, bias and convergence checks.
"""
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Tuple

import numpy as np
from scipy import stats

from adaptive_bot.models.tracking_filter import (
    FilterSettings,
    FilterVariant,
    NoiseTruth,
    RunRecord,
    run_filter,
)
from adaptive_bot.modules.beliefs import STATE_DIM, GaussianBelief
from adaptive_bot.modules.filter_core import ProcessModel, process_noise_cov
from adaptive_bot.modules.moments import cholesky, linear_measurement
from adaptive_bot.utils.metrics import AneesResult, anees


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinearGaussianSetup:
    coefficients: Tuple[float, ...] = (1.0, 0.5, 0.0, 0.0)
    initial_state: Tuple[float, ...] = (5.0, 5.0, -0.1, 0.2)
    initial_cov_diag: Tuple[float, ...] = (0.25, 0.25, 0.01, 0.01)
    delta: Fraction = Fraction(1, 12)
    q_bar: float = 1e-4
    num_steps: int = 120
    r_m: float = 0.05
    sigma: float = 0.1
    settings: FilterSettings = field(default_factory=FilterSettings)

    def __post_init__(self):
        if len(self.coefficients) != STATE_DIM or len(self.initial_state) != STATE_DIM:
            raise ValueError(f"Coefficients and initial state need {STATE_DIM} entries.")
        if len(self.initial_cov_diag) != STATE_DIM or min(self.initial_cov_diag) <= 0:
            raise ValueError("Initial covariance diagonal must have positive entries.")
        if self.num_steps < 2:
            raise ValueError(f"Need at least two steps, got {self.num_steps}.")
        if not self.sigma > 0:
            raise ValueError(f"Measurement noise deviation must be positive, got {self.sigma}.")

    @property
    def process_model(self) -> ProcessModel:
        return ProcessModel.create(float(self.delta), self.q_bar, num_steps=self.num_steps)

    @property
    def initial_cov(self) -> np.ndarray:
        return np.diag(np.asarray(self.initial_cov_diag, dtype=np.float64))

    @property
    def noise_truth(self) -> NoiseTruth:
        return NoiseTruth(mean=self.r_m, sigma=np.full(self.num_steps, self.sigma))


@dataclass(frozen=True, eq=False)
class LinearRun:
    truth: np.ndarray
    measurements: np.ndarray
    initial: GaussianBelief


def simulate_linear_run(setup: LinearGaussianSetup, rng: np.random.Generator) -> LinearRun:
    """Process noise first, then one measurement per step, then the initial estimate error."""
    process_model = setup.process_model
    noise_factor = cholesky(
        process_noise_cov(float(setup.delta), setup.q_bar), context="process noise"
    )
    innovations = rng.standard_normal((setup.num_steps, STATE_DIM))

    truth = np.zeros((setup.num_steps, STATE_DIM))
    truth[0] = setup.initial_state
    for k in range(1, setup.num_steps):
        truth[k] = process_model.transition @ truth[k - 1] + noise_factor @ innovations[k]

    coefficients = np.asarray(setup.coefficients)
    noise = setup.r_m + setup.sigma * rng.standard_normal(setup.num_steps)
    measurements = truth @ coefficients + noise

    initial_factor = cholesky(setup.initial_cov, context="initial covariance")
    initial_mean = truth[0] + initial_factor @ rng.standard_normal(STATE_DIM)
    return LinearRun(truth, measurements, GaussianBelief.create(initial_mean, setup.initial_cov))


@dataclass(frozen=True, eq=False)
class LinearExperimentResult:
    variant: FilterVariant
    records: List[RunRecord]

    @property
    def terminal_errors(self) -> np.ndarray:
        """Terminal estimate minus truth per surviving run, shape [M, STATE_DIM]."""
        return np.array(
            [r.estimates[-1] - r.truth[-1] for r in self.records if not r.diverged_numerically]
        )

    def mean_error_confidence(self, level: float = 0.99) -> Tuple[np.ndarray, np.ndarray]:
        """Monte Carlo mean terminal error and the half-width of its confidence interval."""
        errors = self.terminal_errors
        num_runs = errors.shape[0]
        if num_runs < 2:
            raise ValueError(f"Need at least two surviving runs, got {num_runs}.")
        quantile = stats.t.ppf(0.5 + level / 2, df=num_runs - 1)
        half_width = quantile * errors.std(axis=0, ddof=1) / np.sqrt(num_runs)
        return errors.mean(axis=0), half_width

    def anees(self) -> AneesResult:
        nees = np.array([r.nees for r in self.records])
        diverged = np.array([r.diverged_numerically for r in self.records])
        return anees(nees, STATE_DIM, diverged)

    @property
    def terminal_mu_hat(self) -> np.ndarray:
        return np.array([r.mu_hat[-1] for r in self.records if not r.diverged_numerically])

    @property
    def terminal_R_hat(self) -> np.ndarray:
        return np.array([r.R_hat[-1] for r in self.records if not r.diverged_numerically])


def run_linear_experiment(
    setup: LinearGaussianSetup,
    variant: FilterVariant,
    num_runs: int,
    seed: int = 0,
) -> LinearExperimentResult:
    if num_runs < 1:
        raise ValueError(f"Need at least one run, got {num_runs}.")
    measurement = linear_measurement(setup.coefficients)
    process_model = setup.process_model
    noise_truth = setup.noise_truth

    records = []
    for run_seed in np.random.SeedSequence(seed).generate_state(num_runs):
        run = simulate_linear_run(setup, np.random.default_rng(int(run_seed)))
        records.append(
            run_filter(
                variant,
                run.truth,
                run.measurements,
                run.initial,
                process_model,
                noise_truth,
                setup.settings,
                seed=int(run_seed),
                measurement=measurement,
            )
        )

    num_diverged = sum(r.diverged_numerically for r in records)
    logger.debug(f"Linear experiment {variant.name}: {num_runs} runs, {num_diverged} diverged.")
    return LinearExperimentResult(variant, records)
