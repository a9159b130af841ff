"""
Filter variants (EKF/CKF/UKF/GHF x nonadaptive/VB/tuned VB/MAPMLE) and the per-run filter loop.
"""
from __future__ import annotations

import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from typing_extensions import Literal

from adaptive_bot.models.mapmle import DEFAULT_WINDOW_LENGTH, MapMleState, mapmle_measurement_update
from adaptive_bot.models.vbniw import (
    DEFAULT_ALPHA_GRID,
    DEFAULT_DOF_GRID,
    DEFAULT_MAX_ITER,
    DEFAULT_ZETA,
    NiwBelief,
    RDenominator,
    TuningFailedError,
    tune_parameters,
    vb_measurement_update,
)
from adaptive_bot.modules.beliefs import STATE_DIM, GaussianBelief
from adaptive_bot.modules.filter_core import ProcessModel, measurement_update_known, time_update
from adaptive_bot.modules.moments import (
    BEARING_MEASUREMENT,
    DEFAULT_GHF_ORDER,
    DegenerateGeometryError,
    MeasurementModel,
    MomentRule,
    NotPositiveDefiniteError,
    NumericalDivergenceError,
    RuleKind,
)
from adaptive_bot.utils.metrics import compute_nees


logger = logging.getLogger(__name__)

FilterFamily = Literal["ekf", "ckf", "ukf", "ghf"]
AdaptationMode = Literal["nonadaptive", "vb", "vb_tuned", "mapmle"]

FILTER_FAMILIES: Tuple[str, ...] = ("ekf", "ckf", "ukf", "ghf")
ADAPTATION_MODES: Tuple[str, ...] = ("nonadaptive", "vb", "vb_tuned", "mapmle")
HEADLINE_MODES: Tuple[str, ...] = ("nonadaptive", "vb", "mapmle")

FAMILY_RULE_KINDS: Dict[str, RuleKind] = {
    "ekf": RuleKind.LINEARIZED,
    "ckf": RuleKind.CUBATURE,
    "ukf": RuleKind.UNSCENTED,
    "ghf": RuleKind.GAUSS_HERMITE,
}

BASELINE_VARIANT = "ekf/nonadaptive"

FALLBACK_UKF_KAPPA = 0.0


@dataclass(frozen=True)
class FilterVariant:
    family: FilterFamily
    mode: AdaptationMode

    def __post_init__(self):
        if self.family not in FILTER_FAMILIES:
            raise ValueError(f"Unknown filter family {self.family!r}, expected {FILTER_FAMILIES}.")
        if self.mode not in ADAPTATION_MODES:
            raise ValueError(f"Unknown adaptation mode {self.mode!r}, expected {ADAPTATION_MODES}.")

    @staticmethod
    def parse(name: str) -> "FilterVariant":
        family, _, mode = name.partition("/")
        return FilterVariant(family=family, mode=mode or "nonadaptive")  # type: ignore[arg-type]

    @property
    def name(self) -> str:
        return f"{self.family}/{self.mode}"

    @property
    def display_name(self) -> str:
        """Name as used in result tables, e.g. GHF, AGHF-VB or AGHF-MAPMLE."""
        family = self.family.upper()
        if self.mode == "nonadaptive":
            return family
        suffix = {"vb": "VB", "vb_tuned": "VB-tuned", "mapmle": "MAPMLE"}[self.mode]
        return f"A{family}-{suffix}"


@dataclass(frozen=True)
class FilterSettings:
    """Tuning knobs shared by all variants of a campaign."""

    zeta: float = DEFAULT_ZETA
    max_iter: int = DEFAULT_MAX_ITER
    alpha_prime: float = 1.0
    dof_prior: float = 5.0
    dof_grid: Tuple[float, ...] = DEFAULT_DOF_GRID
    alpha_grid: Tuple[float, ...] = DEFAULT_ALPHA_GRID
    r_denominator: RDenominator = "main"
    window_length: int = DEFAULT_WINDOW_LENGTH
    remove_residual_mean: bool = False
    mapmle_estimator: Literal["residual", "innovation"] = "residual"
    ghf_order: int = DEFAULT_GHF_ORDER
    ukf_kappa: Optional[float] = None
    noise_mean_factor: float = 0.5
    noise_covariance_factor: float = 0.5


def build_moment_rule(
    family: str, settings: FilterSettings, ukf_kappa: Optional[float] = None
) -> MomentRule:
    kind = FAMILY_RULE_KINDS[family]
    return MomentRule.create(
        kind,
        STATE_DIM,
        kappa=settings.ukf_kappa if ukf_kappa is None else ukf_kappa,
        order=settings.ghf_order,
    )


@dataclass(frozen=True, eq=False)
class NoiseTruth:
    """True measurement noise statistics of a run: constant mean, per-step standard deviation."""

    mean: float
    sigma: np.ndarray

    def R_at(self, k: int) -> float:
        return float(self.sigma[k] ** 2)


@dataclass(frozen=True)
class StepOutcome:
    posterior: GaussianBelief
    R_hat: float
    mu_hat: float
    iterations: int = 0
    converged: bool = True
    alpha_prime: float = float("nan")
    numerical_issue: bool = False


class TrackingFilter(ABC):
    """Measurement-update strategy of one filter variant; holds the per-run noise state."""

    def __init__(
        self,
        variant: FilterVariant,
        rule: MomentRule,
        settings: FilterSettings,
        measurement: MeasurementModel = BEARING_MEASUREMENT,
    ):
        self.variant = variant
        self.rule = rule
        self.settings = settings
        self.measurement = measurement
        self.noise_truth: Optional[NoiseTruth] = None
        self.dof_prior = float("nan")

    def reset(self, noise_truth: NoiseTruth) -> None:
        self.noise_truth = noise_truth
        self.dof_prior = float("nan")

    @property
    def noise_mean_guess(self) -> float:
        return self.settings.noise_mean_factor * self.noise_truth.mean

    @property
    def noise_covariance_guess(self) -> float:
        return self.settings.noise_covariance_factor * self.noise_truth.R_at(0)

    @property
    def initial_noise_estimates(self) -> Tuple[float, float]:
        """(mu_hat, R_hat) reported for step 0."""
        return self.noise_mean_guess, self.noise_covariance_guess

    @abstractmethod
    def step(self, prior: GaussianBelief, y: float, k: int) -> StepOutcome:
        raise NotImplementedError()


class NonAdaptiveFilter(TrackingFilter):
    @property
    def initial_noise_estimates(self) -> Tuple[float, float]:
        return self.noise_truth.mean, self.noise_truth.R_at(0)

    def step(self, prior: GaussianBelief, y: float, k: int) -> StepOutcome:
        R = self.noise_truth.R_at(k)
        posterior = measurement_update_known(
            prior, y, self.noise_truth.mean, R, self.rule, self.measurement
        )
        return StepOutcome(posterior=posterior, R_hat=R, mu_hat=self.noise_truth.mean)


class VbFilter(TrackingFilter):
    def reset(self, noise_truth: NoiseTruth) -> None:
        super().reset(noise_truth)
        self.dof_prior = self.settings.dof_prior
        self._niw = NiwBelief.from_guess(
            self.noise_mean_guess,
            self.noise_covariance_guess,
            self.settings.dof_prior,
            self.settings.alpha_prime,
        )

    def step(self, prior: GaussianBelief, y: float, k: int) -> StepOutcome:
        result = vb_measurement_update(
            prior,
            y,
            self._niw,
            self.rule,
            zeta=self.settings.zeta,
            max_iter=self.settings.max_iter,
            measurement=self.measurement,
            r_denominator=self.settings.r_denominator,
        )
        self._niw = result.niw
        return StepOutcome(
            posterior=result.posterior,
            R_hat=result.R_hat,
            mu_hat=result.mu_hat,
            iterations=result.iterations,
            converged=result.converged,
            alpha_prime=result.niw.alpha_prime,
            numerical_issue=result.numerical_issue,
        )


class VbTunedFilter(TrackingFilter):
    def reset(self, noise_truth: NoiseTruth) -> None:
        super().reset(noise_truth)
        self._niw: Optional[NiwBelief] = None

    def step(self, prior: GaussianBelief, y: float, k: int) -> StepOutcome:
        tuned = tune_parameters(
            prior,
            y,
            self.rule,
            R_guess=self.noise_covariance_guess,
            mu_guess=self.noise_mean_guess,
            niw=self._niw,
            dof_grid=self.settings.dof_grid,
            alpha_grid=self.settings.alpha_grid,
            zeta=self.settings.zeta,
            max_iter=self.settings.max_iter,
            measurement=self.measurement,
            r_denominator=self.settings.r_denominator,
        )
        if tuned.u0 is not None:
            self.dof_prior = tuned.u0
            logger.debug(f"Step {k}: tuned u0={tuned.u0:g}, alpha'={tuned.alpha_prime:g}.")

        result = tuned.update
        self._niw = result.niw
        return StepOutcome(
            posterior=result.posterior,
            R_hat=result.R_hat,
            mu_hat=result.mu_hat,
            iterations=result.iterations,
            converged=result.converged,
            alpha_prime=tuned.alpha_prime,
            numerical_issue=result.numerical_issue,
        )


class MapMleFilter(TrackingFilter):
    def reset(self, noise_truth: NoiseTruth) -> None:
        super().reset(noise_truth)
        self._state = MapMleState.create(
            self.noise_mean_guess,
            self.noise_covariance_guess,
            window_length=self.settings.window_length,
            remove_residual_mean=self.settings.remove_residual_mean,
            estimator=self.settings.mapmle_estimator,
        )

    @property
    def state(self) -> MapMleState:
        return self._state

    def step(self, prior: GaussianBelief, y: float, k: int) -> StepOutcome:
        posterior, self._state = mapmle_measurement_update(
            prior, y, self._state, self.rule, self.measurement
        )
        return StepOutcome(posterior=posterior, R_hat=self._state.R_hat, mu_hat=self._state.r_hat)


_FILTER_CLASSES = {
    "nonadaptive": NonAdaptiveFilter,
    "vb": VbFilter,
    "vb_tuned": VbTunedFilter,
    "mapmle": MapMleFilter,
}


def build_filter(
    variant: FilterVariant,
    settings: FilterSettings,
    measurement: MeasurementModel = BEARING_MEASUREMENT,
    ukf_kappa: Optional[float] = None,
) -> TrackingFilter:
    rule = build_moment_rule(variant.family, settings, ukf_kappa=ukf_kappa)
    return _FILTER_CLASSES[variant.mode](variant, rule, settings, measurement)


@dataclass(frozen=True, eq=False)
class RunRecord:
    """Per-step results of one filter on one simulated run; arrays have K = num_steps rows.

    Steps after a numerical divergence hold NaN (iterations hold -1).
    """

    variant: str
    seed: int
    truth: np.ndarray
    estimates: np.ndarray
    cov_diag: np.ndarray
    nees: np.ndarray
    R_hat: np.ndarray
    mu_hat: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    alpha_prime: np.ndarray
    dof_prior: float
    wall_time: float
    diverged_numerically: bool = False
    divergence_step: Optional[int] = None
    kappa_fallback: bool = False
    numerical_issue_steps: int = 0

    @staticmethod
    def failed(variant: str, seed: int, truth_relative: np.ndarray) -> "RunRecord":
        """Record of a run that could not be started, e.g. for lack of a valid initial belief."""
        buffers = _empty_buffers(truth_relative.shape[0])
        return RunRecord(
            variant=variant,
            seed=seed,
            truth=np.asarray(truth_relative, dtype=np.float64),
            estimates=buffers["estimates"],
            cov_diag=np.full((truth_relative.shape[0], STATE_DIM), np.nan),
            nees=np.full(truth_relative.shape[0], np.nan),
            R_hat=buffers["R_hat"],
            mu_hat=buffers["mu_hat"],
            iterations=buffers["iterations"],
            converged=buffers["converged"],
            alpha_prime=buffers["alpha_prime"],
            dof_prior=float("nan"),
            wall_time=0.0,
            diverged_numerically=True,
            divergence_step=0,
        )

    @property
    def num_steps(self) -> int:
        return self.truth.shape[0]

    @property
    def position_errors(self) -> np.ndarray:
        diff = self.estimates[:, :2] - self.truth[:, :2]
        return np.hypot(diff[:, 0], diff[:, 1])

    @property
    def velocity_errors(self) -> np.ndarray:
        diff = self.estimates[:, 2:] - self.truth[:, 2:]
        return np.hypot(diff[:, 0], diff[:, 1])

    @property
    def terminal_position_error(self) -> float:
        return float(self.position_errors[-1])

    @property
    def nonconverged_steps(self) -> int:
        return int(np.sum(~self.converged[1:] & (self.iterations[1:] > 0)))


class _RunDiverged(Exception):
    def __init__(self, step: int, cause: Exception):
        super().__init__()
        self.step = step
        self.cause = cause


def _filter_loop(
    tracking_filter: TrackingFilter,
    measurements: np.ndarray,
    initial: GaussianBelief,
    process_model: ProcessModel,
    buffers: Dict[str, np.ndarray],
) -> None:
    belief = initial
    buffers["estimates"][0] = initial.mean
    buffers["covs"][0] = initial.cov
    buffers["mu_hat"][0], buffers["R_hat"][0] = tracking_filter.initial_noise_estimates
    buffers["iterations"][0] = 0
    buffers["converged"][0] = True

    for k in range(1, measurements.shape[0]):
        try:
            prior = time_update(belief, process_model, k)
            outcome = tracking_filter.step(prior, float(measurements[k]), k)
        except (NumericalDivergenceError, DegenerateGeometryError, TuningFailedError) as e:
            raise _RunDiverged(k, e) from e
        if not np.all(np.isfinite(outcome.posterior.mean)):
            raise _RunDiverged(k, NumericalDivergenceError("Non-finite state estimate."))

        belief = outcome.posterior
        buffers["estimates"][k] = belief.mean
        buffers["covs"][k] = belief.cov
        buffers["R_hat"][k] = outcome.R_hat
        buffers["mu_hat"][k] = outcome.mu_hat
        buffers["iterations"][k] = outcome.iterations
        buffers["converged"][k] = outcome.converged
        buffers["alpha_prime"][k] = outcome.alpha_prime
        buffers["numerical_issue"][k] = outcome.numerical_issue


def _empty_buffers(num_steps: int) -> Dict[str, np.ndarray]:
    return {
        "estimates": np.full((num_steps, STATE_DIM), np.nan),
        "covs": np.full((num_steps, STATE_DIM, STATE_DIM), np.nan),
        "R_hat": np.full(num_steps, np.nan),
        "mu_hat": np.full(num_steps, np.nan),
        "iterations": np.full(num_steps, -1, dtype=np.int64),
        "converged": np.zeros(num_steps, dtype=bool),
        "alpha_prime": np.full(num_steps, np.nan),
        "numerical_issue": np.zeros(num_steps, dtype=bool),
    }


def run_filter(
    variant: FilterVariant,
    truth_relative: np.ndarray,
    measurements: np.ndarray,
    initial: GaussianBelief,
    process_model: ProcessModel,
    noise_truth: NoiseTruth,
    settings: FilterSettings = FilterSettings(),
    seed: int = 0,
    measurement: MeasurementModel = BEARING_MEASUREMENT,
) -> RunRecord:
    """Run one filter variant over one measurement sequence.

    Numerical divergence never raises: it is recorded on the returned RunRecord. A UKF whose
    default kappa produces a non-positive-definite matrix is rerun from the start with kappa = 0.

    Args:
        variant: filter family and adaptation mode.
        truth_relative: true relative states, shape [K, STATE_DIM]; only used for NEES and errors.
        measurements: measured bearings, shape [K]; entry 0 is not used by the filter loop.
        initial: belief at step 0.
        process_model: relative motion model including the ownship inputs.
        noise_truth: true noise statistics (used by nonadaptive filters and for initial guesses).
        settings: shared filter settings.
        seed: seed of the run, stored on the record.
        measurement: measurement model, bearings by default.
    """
    num_steps = measurements.shape[0]
    kappa_fallback = False
    ukf_kappa: Optional[float] = None

    while True:
        tracking_filter = build_filter(variant, settings, measurement, ukf_kappa=ukf_kappa)
        tracking_filter.reset(noise_truth)
        buffers = _empty_buffers(num_steps)
        divergence: Optional[_RunDiverged] = None

        start_time = time.perf_counter()
        try:
            _filter_loop(tracking_filter, measurements, initial, process_model, buffers)
        except _RunDiverged as e:
            divergence = e
        wall_time = time.perf_counter() - start_time

        can_fall_back = (
            variant.family == "ukf"
            and not kappa_fallback
            and tracking_filter.rule.kappa != FALLBACK_UKF_KAPPA
            and divergence is not None
            and isinstance(divergence.cause, NotPositiveDefiniteError)
        )
        if not can_fall_back:
            break
        logger.warning(
            f"Run {seed}: {variant.name} hit a non-positive-definite matrix at step "
            f"{divergence.step} with kappa={tracking_filter.rule.kappa:g}; "
            f"rerunning with kappa={FALLBACK_UKF_KAPPA:g}."
        )
        kappa_fallback = True
        ukf_kappa = FALLBACK_UKF_KAPPA

    if divergence is not None:
        logger.info(
            f"Run {seed}: {variant.name} diverged numerically at step {divergence.step}: "
            f"{divergence.cause}"
        )

    nees = compute_nees(truth_relative, buffers["estimates"], buffers["covs"])
    record = RunRecord(
        variant=variant.name,
        seed=seed,
        truth=np.asarray(truth_relative, dtype=np.float64),
        estimates=buffers["estimates"],
        cov_diag=np.diagonal(buffers["covs"], axis1=1, axis2=2).copy(),
        nees=nees,
        R_hat=buffers["R_hat"],
        mu_hat=buffers["mu_hat"],
        iterations=buffers["iterations"],
        converged=buffers["converged"],
        alpha_prime=buffers["alpha_prime"],
        dof_prior=tracking_filter.dof_prior,
        wall_time=wall_time,
        diverged_numerically=divergence is not None,
        divergence_step=None if divergence is None else divergence.step,
        kappa_fallback=kappa_fallback,
        numerical_issue_steps=int(buffers["numerical_issue"].sum()),
    )
    if record.nonconverged_steps > 0:
        logger.debug(
            f"Run {seed}: {variant.name} hit max_iter in {record.nonconverged_steps} steps."
        )
    return record


def with_settings(settings: FilterSettings, **overrides) -> FilterSettings:
    """Copy of `settings` with the given fields replaced; None values are ignored."""
    return replace(settings, **{k: v for k, v in overrides.items() if v is not None})


def variants_for(families: Sequence[str], modes: Sequence[str]) -> Tuple[FilterVariant, ...]:
    return tuple(
        FilterVariant(family, mode)  # type: ignore[arg-type]
        for family in families
        for mode in modes
    )
