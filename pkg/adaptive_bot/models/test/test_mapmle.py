import sys

import numpy as np
import pytest
from pyprojroot import here as project_root

sys.path.insert(0, str(project_root()))

from adaptive_bot.models.mapmle import (
    EmptyResidualWindowError,
    MapMleState,
    estimate_R_innovation,
    estimate_R_residual,
    mapmle_measurement_update,
    update_noise_mean,
)
from adaptive_bot.modules.beliefs import STATE_DIM, GaussianBelief
from adaptive_bot.modules.moments import (
    BEARING_MEASUREMENT,
    MomentRule,
    RuleKind,
    linear_measurement,
    propagate,
)


# A belief with zero covariance is left unchanged by the update, so every
# innovation is simply y - h(x).
KNOWN_STATE = GaussianBelief.create([1.0, 2.0, 0.0, 0.0], np.zeros((STATE_DIM, STATE_DIM)))
OBSERVE_X = linear_measurement([1.0, 0.0, 0.0, 0.0])
CUBATURE = MomentRule.create(RuleKind.CUBATURE)


def run_updates(state: MapMleState, errors) -> MapMleState:
    for error in errors:
        posterior, state = mapmle_measurement_update(
            KNOWN_STATE, 1.0 + error, state, CUBATURE, OBSERVE_X
        )
        np.testing.assert_array_equal(posterior.mean, KNOWN_STATE.mean)
    return state


def test_create_validates_arguments():
    with pytest.raises(ValueError):
        MapMleState.create(0.0, 1e-3, window_length=0)
    with pytest.raises(ValueError):
        MapMleState.create(0.0, 0.0)


def test_noise_mean_is_the_running_mean_of_innovations():
    errors = np.random.default_rng(1).normal(0.3, 0.1, size=37)
    state = run_updates(MapMleState.create(5.0, 1e-2), errors)
    assert state.k == 37
    assert state.r_hat == pytest.approx(errors.mean())
    assert state.mean_accumulator == pytest.approx(errors.sum())

    assert update_noise_mean(MapMleState.create(5.0, 1e-2), 0.2) == pytest.approx(0.2)


def test_window_keeps_the_last_entries():
    state = MapMleState.create(0.0, 1.0, window_length=3)
    for value in range(5):
        state = state.push(value)
    assert state.window == (2.0, 3.0, 4.0)


def test_residual_estimator():
    errors = [0.1, -0.2, 0.3, 0.4]
    state = run_updates(MapMleState.create(0.0, 1e-2, window_length=3), errors)
    assert state.R_hat == pytest.approx(np.mean(np.square(errors[-3:])))

    centred = run_updates(
        MapMleState.create(0.0, 1e-2, window_length=3, remove_residual_mean=True), errors
    )
    assert centred.R_hat == pytest.approx(np.mean(np.square(np.array(errors[-3:]) - 0.15)))


def test_estimators_add_or_subtract_the_spread():
    state = MapMleState.create(0.0, 1.0).push(0.3).push(-0.1)
    assert estimate_R_residual(state, 0.01) == pytest.approx(0.05 + 0.01)
    assert estimate_R_innovation(state, 0.01) == pytest.approx(0.05 - 0.01)

    with pytest.raises(EmptyResidualWindowError):
        estimate_R_residual(MapMleState.create(0.0, 1.0), 0.01)


def test_negative_innovation_estimate_keeps_previous_covariance():
    prior = GaussianBelief.create([1.0, 2.0, 0.0, 0.0], np.diag([1.0, 1.0, 1.0, 1.0]))
    state = MapMleState.create(0.0, 0.5, estimator="innovation")
    # Zero innovation against a unit predicted spread gives a negative estimate.
    _, state = mapmle_measurement_update(prior, 1.0, state, CUBATURE, OBSERVE_X)
    assert state.R_hat == 0.5
    assert state.window == (0.0,)


def test_adaptation_can_be_disabled():
    state = MapMleState.create(0.01, 2e-3, adapt=False)
    final = run_updates(state, [0.5, -0.4, 0.2])
    assert final is state


def test_bearing_update_keeps_a_valid_belief():
    prior = GaussianBelief.create([3.0, 4.0, -0.1, 0.05], np.diag([0.5, 0.5, 0.01, 0.01]))
    state = MapMleState.create(0.0, np.radians(1.5) ** 2)
    y = BEARING_MEASUREMENT(prior.mean) + 0.01
    posterior, state = mapmle_measurement_update(prior, y, state, CUBATURE)
    assert np.trace(posterior.cov) < np.trace(prior.cov)
    assert state.R_hat > 0
    assert state.r_hat == pytest.approx(y - propagate(prior, CUBATURE, BEARING_MEASUREMENT).y_hat)
