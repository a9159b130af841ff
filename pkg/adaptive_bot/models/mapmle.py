"""
MAP/MLE adaptive measurement update: the noise mean is the running mean of the innovations and
the noise covariance is estimated from a sliding window of post-fit residuals.
"""
import logging
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np
from typing_extensions import Literal

from adaptive_bot.modules.beliefs import GaussianBelief
from adaptive_bot.modules.filter_core import kalman_correct, measurement_residual
from adaptive_bot.modules.moments import (
    BEARING_MEASUREMENT,
    MeasurementModel,
    MomentRule,
    propagate,
)


logger = logging.getLogger(__name__)

DEFAULT_WINDOW_LENGTH = 20

CovarianceEstimator = Literal["residual", "innovation"]


class EmptyResidualWindowError(ValueError):
    def __str__(self):
        return "Cannot estimate the noise covariance from an empty window."


@dataclass(frozen=True)
class MapMleState:
    """Noise statistics carried between MAPMLE steps.

    Args:
        k: number of innovations folded into r_hat so far.
        mean_accumulator: running sum of the innovations.
        r_hat: current noise mean estimate.
        R_hat: current noise covariance estimate.
        window: the last (at most window_length) post-fit residuals, or innovations for the
            "innovation" estimator.
        window_length: sliding window length L.
        remove_residual_mean: subtract r_hat from the window entries before squaring.
        adapt: if False the estimates are held fixed.
        estimator: "residual" (default) or "innovation".
    """

    k: int
    mean_accumulator: float
    r_hat: float
    R_hat: float
    window: Tuple[float, ...] = ()
    window_length: int = DEFAULT_WINDOW_LENGTH
    remove_residual_mean: bool = False
    adapt: bool = True
    estimator: CovarianceEstimator = "residual"

    @staticmethod
    def create(
        r_guess: float,
        R_guess: float,
        window_length: int = DEFAULT_WINDOW_LENGTH,
        remove_residual_mean: bool = False,
        adapt: bool = True,
        estimator: CovarianceEstimator = "residual",
    ) -> "MapMleState":
        if window_length < 1:
            raise ValueError(f"Window length must be at least 1, got {window_length}.")
        if not R_guess > 0:
            raise ValueError(f"Initial noise covariance guess must be positive, got {R_guess}.")
        return MapMleState(
            k=0,
            mean_accumulator=0.0,
            r_hat=float(r_guess),
            R_hat=float(R_guess),
            window_length=window_length,
            remove_residual_mean=remove_residual_mean,
            adapt=adapt,
            estimator=estimator,
        )

    def push(self, value: float) -> "MapMleState":
        return replace(self, window=(self.window + (float(value),))[-self.window_length :])


def update_noise_mean(state: MapMleState, innovation: float) -> float:
    """Running mean of the innovations including `innovation` as the (k+1)-th sample."""
    return state.r_hat + (innovation - state.r_hat) / (state.k + 1)


def _window_second_moment(state: MapMleState) -> float:
    if len(state.window) == 0:
        raise EmptyResidualWindowError()
    values = np.asarray(state.window)
    if state.remove_residual_mean:
        values = values - state.r_hat
    return float(np.mean(values ** 2))


def estimate_R_residual(state: MapMleState, posterior_meas_spread: float) -> float:
    """Window mean of squared post-fit residuals plus the posterior measurement spread.

    Positive whenever the spread is positive or any residual is non-zero.
    """
    return _window_second_moment(state) + posterior_meas_spread


def estimate_R_innovation(state: MapMleState, prior_meas_spread: float) -> float:
    """Window mean of squared innovations minus the predicted spread. May be negative."""
    return _window_second_moment(state) - prior_meas_spread


def mapmle_measurement_update(
    prior: GaussianBelief,
    y: float,
    state: MapMleState,
    rule: MomentRule,
    measurement: MeasurementModel = BEARING_MEASUREMENT,
) -> Tuple[GaussianBelief, MapMleState]:
    """Known-statistics update with the current estimates, followed by re-estimation.

    Raises:
        NotPositiveDefiniteError: if the posterior covariance is not positive definite.
    """
    angular = measurement.is_angular
    prior_moments = propagate(prior, rule, measurement)
    posterior = kalman_correct(
        prior, prior_moments, y, state.r_hat, state.R_hat, angular, context="MAPMLE update"
    )
    if not state.adapt:
        return posterior, state

    innovation = measurement_residual(y, prior_moments.y_hat, angular)
    next_state = replace(
        state,
        k=state.k + 1,
        mean_accumulator=state.mean_accumulator + innovation,
        r_hat=update_noise_mean(state, innovation),
    )

    if state.estimator == "innovation":
        next_state = next_state.push(innovation)
        R_hat = estimate_R_innovation(next_state, prior_moments.spread)
    else:
        posterior_moments = propagate(posterior, rule, measurement)
        next_state = next_state.push(measurement_residual(y, posterior_moments.y_hat, angular))
        R_hat = estimate_R_residual(next_state, posterior_moments.spread)

    if R_hat > 0:
        next_state = replace(next_state, R_hat=R_hat)
    else:
        logger.debug(f"Keeping the previous noise covariance, estimate was {R_hat:.3e}.")

    return posterior, next_state
