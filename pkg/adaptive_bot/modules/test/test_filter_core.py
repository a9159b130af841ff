import sys
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from pyprojroot import here as project_root

sys.path.insert(0, str(project_root()))

from adaptive_bot.data.scenario import simulate_truth
from adaptive_bot.data.scenario_config import load_scenario_config
from adaptive_bot.modules.beliefs import STATE_DIM, GaussianBelief
from adaptive_bot.modules.filter_core import (
    ProcessModel,
    constant_velocity_transition,
    measurement_residual,
    measurement_update_known,
    ownship_inputs,
    process_noise_cov,
    time_update,
)
from adaptive_bot.modules.moments import (
    BEARING_MEASUREMENT,
    MomentRule,
    RuleKind,
    linear_measurement,
)


DELTA = float(Fraction(1, 12))


@pytest.fixture
def prior() -> GaussianBelief:
    return GaussianBelief.create(
        [2.0, 3.0, 0.05, -0.1], np.diag([0.4, 0.6, 0.01, 0.02]) + 0.005 * np.ones((4, 4))
    )


def test_transition_and_process_noise():
    transition = constant_velocity_transition(DELTA)
    np.testing.assert_array_equal(transition[:2, 2:], DELTA * np.eye(2))
    np.testing.assert_array_equal(transition[2:, :2], np.zeros((2, 2)))

    q_bar = 2.0
    noise_cov = process_noise_cov(DELTA, q_bar)
    assert noise_cov[0, 0] == pytest.approx(q_bar * DELTA ** 3 / 3)
    assert noise_cov[0, 2] == pytest.approx(q_bar * DELTA ** 2 / 2)
    assert noise_cov[3, 3] == pytest.approx(q_bar * DELTA)
    assert noise_cov[0, 1] == 0.0
    np.testing.assert_array_equal(noise_cov, noise_cov.T)
    assert np.all(np.linalg.eigvalsh(noise_cov) > 0)

    np.testing.assert_array_equal(process_noise_cov(DELTA, 0.0), np.zeros((4, 4)))


def test_straight_line_ownship_has_no_inputs():
    velocity = np.array([0.1, -0.05])
    times = DELTA * np.arange(10)
    ownship = np.concatenate([times[:, None] * velocity, np.tile(velocity, (10, 1))], axis=1)
    np.testing.assert_allclose(ownship_inputs(DELTA, ownship), np.zeros((10, 4)), atol=1e-15)


def test_time_update_tracks_noise_free_relative_motion():
    cfg = replace(load_scenario_config("scenario1"), q_bar=0.0)
    truth = simulate_truth(cfg, np.random.default_rng(0))
    model = ProcessModel.from_ownship(cfg.delta_min, cfg.q_bar, truth.ownship)

    for k in range(1, truth.num_steps):
        belief = GaussianBelief.create(truth.relative[k - 1], np.eye(STATE_DIM))
        predicted = time_update(belief, model, k)
        np.testing.assert_allclose(predicted.mean, truth.relative[k], rtol=0, atol=1e-12)


def test_time_update_covariance(prior: GaussianBelief):
    model = ProcessModel.create(DELTA, 1e-3, num_steps=5)
    predicted = time_update(prior, model, 1)
    transition = model.transition
    np.testing.assert_allclose(
        predicted.cov, transition @ prior.cov @ transition.T + model.noise_cov
    )
    np.testing.assert_array_equal(model.input_at(10), np.zeros(STATE_DIM))


def test_measurement_residual_wraps_angles():
    assert measurement_residual(np.pi - 0.1, -np.pi + 0.1) == pytest.approx(-0.2)
    assert measurement_residual(np.pi - 0.1, -np.pi + 0.1, angular=False) == pytest.approx(
        2 * np.pi - 0.2
    )


@pytest.mark.parametrize("kind", list(RuleKind))
def test_linear_update_is_the_kalman_update(kind: RuleKind, prior: GaussianBelief):
    coefficients = np.array([1.0, 0.5, 0.0, 0.0])
    r_m, R, y = 0.05, 0.02, 4.1
    posterior = measurement_update_known(
        prior, y, r_m, R, MomentRule.create(kind), linear_measurement(coefficients)
    )

    p_h = prior.cov @ coefficients
    gain = p_h / (coefficients @ p_h + R)
    expected_mean = prior.mean + gain * (y - coefficients @ prior.mean - r_m)
    expected_cov = prior.cov - np.outer(gain, p_h)
    np.testing.assert_allclose(posterior.mean, expected_mean, rtol=1e-10)
    np.testing.assert_allclose(posterior.cov, expected_cov, rtol=1e-10, atol=1e-14)


def test_bearing_update_reduces_uncertainty(prior: GaussianBelief):
    rule = MomentRule.create(RuleKind.CUBATURE)
    y = BEARING_MEASUREMENT(prior.mean) + 0.01
    posterior = measurement_update_known(prior, y, 0.0, np.radians(1.5) ** 2, rule)
    assert np.trace(posterior.cov) < np.trace(prior.cov)
    assert np.all(np.linalg.eigvalsh(posterior.cov) > 0)


def test_known_update_rejects_non_positive_noise(prior: GaussianBelief):
    with pytest.raises(ValueError):
        measurement_update_known(prior, 0.5, 0.0, 0.0, MomentRule.create(RuleKind.CUBATURE))
