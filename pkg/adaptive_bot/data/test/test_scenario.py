import sys
from dataclasses import replace

import numpy as np
import pytest
from pyprojroot import here as project_root

sys.path.insert(0, str(project_root()))

from adaptive_bot.data.scenario import (
    InvalidScenarioError,
    ScenarioConfig,
    StaticNoise,
    VaryingNoise,
    build_ownship_trajectory,
    generate_measurement,
    initial_belief,
    knots_to_km_per_min,
    km_per_min_to_knots,
    noise_free_range_bounds,
    ownship_course_at,
    resolve_noise_case,
    sigma_theta_at,
    simulate_truth,
)
from adaptive_bot.data.scenario_config import load_scenario_config
from adaptive_bot.modules.beliefs import wrap_angle
from adaptive_bot.modules.moments import DegenerateGeometryError


@pytest.fixture
def scenario1() -> ScenarioConfig:
    return load_scenario_config("scenario1")


@pytest.fixture
def varying_noise() -> VaryingNoise:
    return VaryingNoise(sigma_min=np.radians(1.5), sigma_max=np.radians(4.0), d_min=2.0, d_max=6.0)


def test_unit_conversions():
    assert knots_to_km_per_min(1.0) == pytest.approx(1.852 / 60)
    assert km_per_min_to_knots(knots_to_km_per_min(15.0)) == pytest.approx(15.0)
    with pytest.raises(ValueError):
        knots_to_km_per_min(-1.0)


def test_config_validation(scenario1: ScenarioConfig):
    with pytest.raises(InvalidScenarioError) as exc_info:
        replace(scenario1, initial_range=-1.0)
    assert exc_info.value.field_name == "initial_range"

    with pytest.raises(InvalidScenarioError):
        replace(scenario1, maneuver_start=20.0, maneuver_end=10.0)
    with pytest.raises(InvalidScenarioError):
        scenario1.with_noise_case(VaryingNoise(sigma_min=0.1, sigma_max=0.05))


def test_steps_and_times(scenario1: ScenarioConfig):
    assert scenario1.num_steps == 361
    times = scenario1.times()
    assert times[0] == 0.0
    assert times[-1] == pytest.approx(30.0, abs=1e-12)
    assert times[12] == pytest.approx(1.0, abs=1e-12)


def test_ownship_turns_on_the_short_arc(scenario1: ScenarioConfig):
    assert ownship_course_at(0.0, scenario1) == pytest.approx(np.radians(140.0))
    assert ownship_course_at(13.0, scenario1) == pytest.approx(np.radians(140.0))
    # 140 deg to 20 deg: half way through the turn the course is 80 deg.
    assert ownship_course_at(15.0, scenario1) == pytest.approx(np.radians(80.0))
    assert ownship_course_at(17.0, scenario1) == pytest.approx(np.radians(20.0))
    assert ownship_course_at(30.0, scenario1) == pytest.approx(np.radians(20.0))


def test_ownship_trajectory(scenario1: ScenarioConfig):
    trajectory = build_ownship_trajectory(scenario1)
    assert trajectory.shape == (361, 4)
    np.testing.assert_array_equal(trajectory[0, :2], [0.0, 0.0])
    speeds = np.hypot(trajectory[:, 2], trajectory[:, 3])
    np.testing.assert_allclose(speeds, scenario1.ownship_speed)


def test_target_moves_on_a_straight_line_without_process_noise(scenario1: ScenarioConfig):
    cfg = replace(scenario1, q_bar=0.0)
    truth = simulate_truth(cfg, np.random.default_rng(3))

    start = truth.target[0]
    times = cfg.times()
    np.testing.assert_allclose(
        truth.target[:, :2], start[:2] + times[:, None] * start[2:], rtol=0, atol=1e-12
    )
    np.testing.assert_allclose(truth.target[:, 2:], np.tile(start[2:], (truth.num_steps, 1)))
    assert truth.ranges[0] == pytest.approx(cfg.initial_range)


def test_noise_free_measurements_equal_true_bearings(scenario1: ScenarioConfig):
    truth = simulate_truth(scenario1.noise_free(), np.random.default_rng(0))
    np.testing.assert_allclose(truth.measured_bearing, truth.true_bearing, rtol=0, atol=1e-12)


def test_measurements_are_wrapped_and_reproducible(scenario1: ScenarioConfig):
    first = simulate_truth(scenario1, np.random.default_rng(11))
    second = simulate_truth(scenario1, np.random.default_rng(11))
    np.testing.assert_array_equal(first.measured_bearing, second.measured_bearing)
    np.testing.assert_array_equal(first.target, second.target)
    assert np.all(first.measured_bearing > -np.pi) and np.all(first.measured_bearing <= np.pi)

    errors = wrap_angle(first.measured_bearing - first.true_bearing)
    assert np.mean(errors) == pytest.approx(scenario1.r_m_true, abs=4 * np.radians(1.5) / 19)


def test_draw_order(scenario1: ScenarioConfig):
    rng = np.random.default_rng(5)
    truth = simulate_truth(scenario1, rng)
    initial_belief(truth.measured_bearing[0], scenario1, truth.ownship_at(0), rng)

    reference = np.random.default_rng(5)
    reference.standard_normal((scenario1.num_steps, 4))
    reference.standard_normal(scenario1.num_steps)
    reference.standard_normal(2)
    assert rng.standard_normal() == reference.standard_normal()


def test_sigma_theta(varying_noise: VaryingNoise):
    assert sigma_theta_at(1.0, StaticNoise(0.02)) == 0.02
    assert sigma_theta_at(2.0, varying_noise) == pytest.approx(np.radians(1.5))
    assert sigma_theta_at(6.0, varying_noise) == pytest.approx(np.radians(4.0))
    assert sigma_theta_at(4.0, varying_noise) == pytest.approx(np.radians(2.75))
    # Clamped outside [d_min, d_max].
    assert sigma_theta_at(0.5, varying_noise) == pytest.approx(np.radians(1.5))
    assert sigma_theta_at(9.0, varying_noise) == pytest.approx(np.radians(4.0))

    with pytest.raises(ValueError):
        sigma_theta_at(3.0, replace(varying_noise, d_min=None, d_max=None))


def test_resolve_noise_case():
    static_cfg = load_scenario_config("scenario2", case=1)
    assert resolve_noise_case(static_cfg) is static_cfg

    cfg = load_scenario_config("scenario2", case=2)
    assert not cfg.noise_case.is_resolved
    resolved = resolve_noise_case(cfg)
    d_min, d_max = noise_free_range_bounds(cfg)
    assert resolved.noise_case.d_min == d_min
    assert resolved.noise_case.d_max == d_max
    assert 0 < d_min < d_max
    assert d_max >= cfg.initial_range - 1e-12

    truth = simulate_truth(resolved, np.random.default_rng(0))
    assert truth.sigma_theta.min() >= np.radians(1.5) - 1e-12
    assert truth.sigma_theta.max() <= np.radians(4.0) + 1e-12


def test_initial_belief(scenario1: ScenarioConfig):
    rng = np.random.default_rng(8)
    truth = simulate_truth(scenario1, rng)
    first_bearing = truth.measured_bearing[0]
    belief = initial_belief(first_bearing, scenario1, truth.ownship_at(0), rng)

    assert np.arctan2(belief.mean[0], belief.mean[1]) == pytest.approx(first_bearing)
    ownship = truth.ownship_at(0)
    course = np.arctan2(belief.mean[2] + ownship.vx, belief.mean[3] + ownship.vy)
    assert wrap_angle(course - first_bearing - np.pi) == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(belief.cov, belief.cov.T)
    assert np.all(np.linalg.eigvalsh(belief.cov) > 0)


def test_initial_range_is_floored(scenario1: ScenarioConfig):
    cfg = replace(scenario1, sigma_r=1000.0)
    truth = simulate_truth(cfg, np.random.default_rng(0))
    for seed in range(20):
        belief = initial_belief(
            truth.measured_bearing[0], cfg, truth.ownship_at(0), np.random.default_rng(seed)
        )
        assert np.hypot(belief.mean[0], belief.mean[1]) >= 0.1 * cfg.initial_range - 1e-12


@pytest.mark.parametrize(
    "rel, r_m, expected_deg",
    [
        ([1.0, 1.0, 0.0, 0.0], 0.0, 45.0),
        ([3.0, 4.0, 0.0, 0.0], np.radians(0.1), np.degrees(np.arctan2(3.0, 4.0)) + 0.1),
        ([0.0, -1.0, 0.0, 0.0], 0.0, 180.0),
    ],
)
def test_generate_measurement_without_noise(rel, r_m: float, expected_deg: float):
    rng = np.random.default_rng(0)
    measured = generate_measurement(np.array(rel), 0.0, r_m, rng)
    assert np.degrees(measured) == pytest.approx(expected_deg, abs=1e-9)


def test_generate_measurement_noise_statistics():
    rng = np.random.default_rng(3)
    sigma, r_m = np.radians(2.0), np.radians(0.1)
    rel = np.array([3.0, 4.0, 0.0, 0.0])
    measured = np.array([generate_measurement(rel, sigma, r_m, rng) for _ in range(4000)])
    errors = measured - np.arctan2(3.0, 4.0)
    assert np.mean(errors) == pytest.approx(r_m, abs=4 * sigma / np.sqrt(4000))
    assert np.std(errors) == pytest.approx(sigma, rel=0.05)


def test_generate_measurement_rejects_zero_position():
    with pytest.raises(DegenerateGeometryError):
        generate_measurement(np.zeros(4), 0.01, 0.0, np.random.default_rng(0))
