import sys
from dataclasses import replace

import numpy as np
import pytest
from pyprojroot import here as project_root

sys.path.insert(0, str(project_root()))

from adaptive_bot.data.scenario import initial_belief, simulate_truth
from adaptive_bot.data.scenario_config import load_scenario_config
from adaptive_bot.models import tracking_filter
from adaptive_bot.models.tracking_filter import (
    ADAPTATION_MODES,
    FILTER_FAMILIES,
    HEADLINE_MODES,
    FilterSettings,
    FilterVariant,
    NoiseTruth,
    RunRecord,
    build_moment_rule,
    run_filter,
    variants_for,
    with_settings,
)
from adaptive_bot.models.vbniw import DEFAULT_DOF_GRID
from adaptive_bot.modules.filter_core import ProcessModel
from adaptive_bot.modules.moments import (
    NotPositiveDefiniteError,
    NumericalDivergenceError,
    RuleKind,
)


NUM_STEPS = 40


def make_run_inputs(seed: int, q_bar=None, num_steps: int = NUM_STEPS):
    cfg = load_scenario_config("scenario1")
    if q_bar is not None:
        cfg = replace(cfg, q_bar=q_bar)
    rng = np.random.default_rng(seed)
    truth = simulate_truth(cfg, rng)
    initial = initial_belief(truth.measured_bearing[0], cfg, truth.ownship_at(0), rng)
    return dict(
        truth_relative=truth.relative[:num_steps],
        measurements=truth.measured_bearing[:num_steps],
        initial=initial,
        process_model=ProcessModel.from_ownship(cfg.delta_min, cfg.q_bar, truth.ownship),
        noise_truth=NoiseTruth(mean=cfg.r_m_true, sigma=truth.sigma_theta),
    )


@pytest.fixture(scope="module")
def run_inputs():
    return make_run_inputs(seed=4)


def test_variant_names():
    variant = FilterVariant.parse("ghf/vb")
    assert variant == FilterVariant("ghf", "vb")
    assert variant.name == "ghf/vb"
    assert variant.display_name == "AGHF-VB"
    assert FilterVariant.parse("ckf").display_name == "CKF"
    assert FilterVariant("ukf", "mapmle").display_name == "AUKF-MAPMLE"
    assert FilterVariant("ekf", "vb_tuned").display_name == "AEKF-VB-tuned"

    with pytest.raises(ValueError):
        FilterVariant.parse("pf/vb")
    with pytest.raises(ValueError):
        FilterVariant.parse("ckf/bayes")


def test_variant_grid():
    assert len(variants_for(FILTER_FAMILIES, HEADLINE_MODES)) == 12
    assert len(variants_for(FILTER_FAMILIES, ADAPTATION_MODES)) == 16


def test_moment_rules_follow_the_family():
    settings = FilterSettings(ghf_order=4)
    assert build_moment_rule("ekf", settings).kind is RuleKind.LINEARIZED
    assert build_moment_rule("ckf", settings).kind is RuleKind.CUBATURE
    assert build_moment_rule("ghf", settings).num_points == 4 ** 4
    assert build_moment_rule("ukf", settings).kappa == pytest.approx(-1.0)
    assert build_moment_rule("ukf", settings, ukf_kappa=0.0).kappa == 0.0


def test_with_settings_ignores_missing_overrides():
    settings = with_settings(FilterSettings(), zeta=1e-4, max_iter=None)
    assert settings.zeta == 1e-4
    assert settings.max_iter == FilterSettings().max_iter


@pytest.mark.parametrize("name", ["ekf/nonadaptive", "ckf/vb", "ukf/mapmle", "ghf/vb"])
def test_run_record_shapes(name: str, run_inputs):
    record = run_filter(FilterVariant.parse(name), **run_inputs, seed=4)

    assert record.variant == name
    assert record.num_steps == NUM_STEPS
    assert record.estimates.shape == (NUM_STEPS, 4)
    assert record.cov_diag.shape == (NUM_STEPS, 4)
    assert not record.diverged_numerically
    assert np.all(np.isfinite(record.estimates))
    assert np.all(np.isfinite(record.nees))
    assert np.all(record.R_hat > 0)
    np.testing.assert_array_equal(record.estimates[0], run_inputs["initial"].mean)
    assert record.wall_time >= 0


def test_adaptive_filters_start_from_the_guesses(run_inputs):
    noise_truth = run_inputs["noise_truth"]
    vb = run_filter(FilterVariant("ckf", "vb"), **run_inputs)
    assert vb.mu_hat[0] == pytest.approx(0.5 * noise_truth.mean)
    assert vb.R_hat[0] == pytest.approx(0.5 * noise_truth.R_at(0))
    assert vb.dof_prior == 5.0
    assert np.all(vb.iterations[1:] >= 1)
    assert np.all(vb.alpha_prime[1:] == 1.0)

    known = run_filter(FilterVariant("ckf", "nonadaptive"), **run_inputs)
    assert known.mu_hat[0] == noise_truth.mean
    assert np.all(known.iterations == 0)


def test_tuned_vb_records_the_chosen_parameters(run_inputs):
    inputs = dict(run_inputs)
    inputs["truth_relative"] = inputs["truth_relative"][:6]
    inputs["measurements"] = inputs["measurements"][:6]
    record = run_filter(FilterVariant("ckf", "vb_tuned"), **inputs)

    assert not record.diverged_numerically
    assert record.dof_prior in DEFAULT_DOF_GRID
    assert np.all(np.isin(record.alpha_prime[1:], FilterSettings().alpha_grid))


def test_ukf_falls_back_to_zero_kappa(monkeypatch, run_inputs):
    original = tracking_filter.measurement_update_known
    kappas = []

    def fails_unless_zero_kappa(prior, y, noise_mean, noise_cov, rule, measurement):
        kappas.append(rule.kappa)
        if rule.kappa != 0.0:
            raise NotPositiveDefiniteError(2, context="test")
        return original(prior, y, noise_mean, noise_cov, rule, measurement)

    monkeypatch.setattr(tracking_filter, "measurement_update_known", fails_unless_zero_kappa)
    record = run_filter(FilterVariant("ukf", "nonadaptive"), **run_inputs)

    assert record.kappa_fallback
    assert not record.diverged_numerically
    assert kappas[0] == pytest.approx(-1.0)
    assert kappas[-1] == 0.0


def test_divergence_is_recorded(monkeypatch, run_inputs):
    def diverges(prior, y, noise_mean, noise_cov, rule, measurement):
        raise NumericalDivergenceError("test")

    monkeypatch.setattr(tracking_filter, "measurement_update_known", diverges)
    record = run_filter(FilterVariant("ckf", "nonadaptive"), **run_inputs)

    assert record.diverged_numerically
    assert record.divergence_step == 1
    assert not record.kappa_fallback
    assert np.all(np.isnan(record.estimates[1:]))
    assert np.all(record.iterations[1:] == -1)
    assert np.isnan(record.terminal_position_error)


def test_failed_record(run_inputs):
    record = RunRecord.failed("ghf/vb", 9, run_inputs["truth_relative"])
    assert record.diverged_numerically
    assert record.divergence_step == 0
    assert record.num_steps == NUM_STEPS
    assert np.all(np.isnan(record.position_errors))


def test_ghf_converges_without_process_noise():
    initial_errors, terminal_errors = [], []
    for seed in range(5):
        inputs = make_run_inputs(seed, q_bar=0.0, num_steps=361)
        record = run_filter(FilterVariant("ghf", "nonadaptive"), **inputs, seed=seed)
        assert not record.diverged_numerically
        initial_errors.append(record.position_errors[0])
        terminal_errors.append(record.terminal_position_error)
    assert np.mean(terminal_errors) < np.mean(initial_errors)
    assert np.median(terminal_errors) < 0.2
