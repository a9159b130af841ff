"""Time update and known-statistics measurement update shared by every filter variant."""
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from adaptive_bot.modules.beliefs import STATE_DIM, GaussianBelief, symmetrize, wrap_angle
from adaptive_bot.modules.moments import (
    BEARING_MEASUREMENT,
    MeasurementModel,
    MomentResult,
    MomentRule,
    cholesky,
    propagate,
)

__all__ = [
    "GaussianBelief",
    "ProcessModel",
    "constant_velocity_transition",
    "process_noise_cov",
    "time_update",
    "wrap_angle",
    "measurement_residual",
    "kalman_correct",
    "measurement_update_known",
]


def constant_velocity_transition(delta: float) -> np.ndarray:
    transition = np.eye(STATE_DIM)
    transition[0, 2] = delta
    transition[1, 3] = delta
    return transition


def process_noise_cov(delta: float, q_bar: float) -> np.ndarray:
    """Discretized white-acceleration noise with intensity q_bar [km^2/min^3]."""
    d2, d3 = delta ** 2 / 2.0, delta ** 3 / 3.0
    return q_bar * np.array(
        [
            [d3, 0.0, d2, 0.0],
            [0.0, d3, 0.0, d2],
            [d2, 0.0, delta, 0.0],
            [0.0, d2, 0.0, delta],
        ]
    )


def ownship_inputs(delta: float, ownship: np.ndarray) -> np.ndarray:
    """Per-step ownship input vectors for a trajectory of shape [K, STATE_DIM].

    Row k holds the part of the ownship motion between steps k-1 and k that the constant
    velocity model does not explain; row 0 is zero.
    """
    ownship = np.asarray(ownship, dtype=np.float64)
    inputs = np.zeros_like(ownship)
    inputs[1:, 0] = ownship[1:, 0] - ownship[:-1, 0] - delta * ownship[:-1, 2]
    inputs[1:, 1] = ownship[1:, 1] - ownship[:-1, 1] - delta * ownship[:-1, 3]
    inputs[1:, 2:] = ownship[1:, 2:] - ownship[:-1, 2:]
    return inputs


@dataclass(frozen=True, eq=False)
class ProcessModel:
    """Relative constant-velocity motion model.

    Args:
        transition: F as ndarray of shape [STATE_DIM, STATE_DIM].
        noise_cov: Q as ndarray of shape [STATE_DIM, STATE_DIM].
        inputs: ownship input vectors as ndarray of shape [K, STATE_DIM]; row k is used by the
            time update into step k.
    """

    transition: np.ndarray
    noise_cov: np.ndarray
    inputs: np.ndarray

    @staticmethod
    def create(
        delta: float, q_bar: float, ownship: Optional[np.ndarray] = None, num_steps: int = 1
    ) -> "ProcessModel":
        if ownship is None:
            inputs = np.zeros((num_steps, STATE_DIM))
        else:
            inputs = ownship_inputs(delta, ownship)
        return ProcessModel(
            transition=constant_velocity_transition(delta),
            noise_cov=process_noise_cov(delta, q_bar),
            inputs=inputs,
        )

    @staticmethod
    def from_ownship(delta: float, q_bar: float, ownship: np.ndarray) -> "ProcessModel":
        return ProcessModel.create(delta, q_bar, ownship=ownship)

    def input_at(self, k: int) -> np.ndarray:
        if k < 0 or k >= self.inputs.shape[0]:
            return np.zeros(STATE_DIM)
        return self.inputs[k]


def time_update(belief: GaussianBelief, model: ProcessModel, k: int) -> GaussianBelief:
    mean = model.transition @ belief.mean - model.input_at(k)
    cov = model.transition @ belief.cov @ model.transition.T + model.noise_cov
    return GaussianBelief(mean=mean, cov=symmetrize(cov))


def measurement_residual(measured: float, predicted: float, angular: bool = True) -> float:
    diff = measured - predicted
    return wrap_angle(diff) if angular else float(diff)


def kalman_correct(
    prior: GaussianBelief,
    moments: MomentResult,
    y: float,
    noise_mean: float,
    noise_cov: float,
    angular: bool = True,
    context: str = "measurement update",
) -> GaussianBelief:
    """Gain-based correction of `prior` given precomputed measurement moments.

    Raises:
        NotPositiveDefiniteError: if the posterior covariance is not positive definite.
    """
    p_yy = moments.spread + noise_cov
    gain = moments.p_xy / p_yy
    innovation = measurement_residual(y, moments.y_hat + noise_mean, angular)

    mean = prior.mean + gain * innovation
    cov = symmetrize(prior.cov - p_yy * np.outer(gain, gain))
    cholesky(cov, context=context)
    return GaussianBelief(mean=mean, cov=cov)


def measurement_update_known(
    prior: GaussianBelief,
    y: float,
    r_m: float,
    R: Union[float, np.ndarray],
    rule: MomentRule,
    measurement: MeasurementModel = BEARING_MEASUREMENT,
) -> GaussianBelief:
    """Measurement update with known noise mean r_m and variance R."""
    R = float(np.squeeze(R))
    if not R > 0:
        raise ValueError(f"Measurement noise variance must be positive, got {R}.")

    moments = propagate(prior, rule, measurement)
    return kalman_correct(prior, moments, y, r_m, R, angular=measurement.is_angular)
