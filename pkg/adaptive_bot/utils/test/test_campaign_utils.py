import os
import sys
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from pyprojroot import here as project_root

sys.path.insert(0, str(project_root()))

from adaptive_bot.data.scenario_config import (
    CAMPAIGN_PRESET,
    ConfigError,
    load_scenario_config,
    preset_path,
)
from adaptive_bot.models.tracking_filter import FilterSettings, FilterVariant
from adaptive_bot.utils.campaign_utils import (
    RUNS_FILE,
    SUMMARY_COLUMNS,
    RunMatrix,
    load_run_matrix,
    run_campaign,
    run_seed,
    simulate_single_run,
)


WALL_TIME_COLUMNS = ["rel_time", "mean_wall_time_s"]


@pytest.fixture
def small_matrix() -> RunMatrix:
    return RunMatrix(
        scenarios=(1,),
        cases=(1, 2),
        families=("ekf", "ckf"),
        modes=("nonadaptive", "mapmle"),
        runs=2,
        track_loss_runs=3,
        base_seed=17,
    )


def read_file(path: str) -> str:
    with open(path) as f:
        return f.read()


def test_run_seed():
    seed = run_seed(0, 1, 2, 3)
    assert seed == run_seed(0, 1, 2, 3)
    assert 0 <= seed < 2 ** 63
    assert seed != run_seed(0, 2, 1, 3)
    assert seed != run_seed(0, 1, 2, 4)
    assert run_seed(5, 1, 2, 3) == (seed ^ 5)


def test_default_matrix_covers_every_headline_cell():
    matrix = load_run_matrix()
    assert matrix.runs == 500
    assert matrix.track_loss_runs == 2000
    assert matrix.runs_per_cell == 2000
    assert matrix.filter_settings == FilterSettings()
    assert len(matrix.cells) * len(matrix.variants) == 48
    assert {v.mode for v in matrix.variants} == {"nonadaptive", "vb", "mapmle"}


def test_matrix_validation():
    with pytest.raises(ValueError):
        RunMatrix(runs=0)
    with pytest.raises(ValueError):
        RunMatrix(track_bound=0.0)
    with pytest.raises(ValueError):
        RunMatrix(families=("pf",))


def test_bad_campaign_file(tmp_path):
    text = read_file(preset_path(CAMPAIGN_PRESET))
    path = os.path.join(tmp_path, "campaign.ini")
    with open(path, "w") as f:
        f.write(text.replace("r_denominator = main", "r_denominator = neither"))
    with pytest.raises(ConfigError) as exc_info:
        load_run_matrix(path)
    assert "r_denominator" in str(exc_info.value)

    with open(path, "w") as f:
        f.write(text.replace("scenarios = 1, 2", "scenarios = one"))
    with pytest.raises(ConfigError):
        load_run_matrix(path)


def test_variants_share_truth_and_measurements():
    cfg = load_scenario_config("scenario1")
    variants = [FilterVariant.parse(name) for name in ("ekf/nonadaptive", "ckf/mapmle")]
    records = simulate_single_run(cfg, run_seed(0, 1, 1, 0), variants, FilterSettings())

    assert [r.variant for r in records] == ["ekf/nonadaptive", "ckf/mapmle"]
    np.testing.assert_array_equal(records[0].truth, records[1].truth)
    np.testing.assert_array_equal(records[0].estimates[0], records[1].estimates[0])


def test_campaign_outputs(tmp_path, small_matrix: RunMatrix):
    outputs = run_campaign(replace(small_matrix, write_run_diagnostics=True), str(tmp_path))

    summary = pd.read_csv(outputs.summary_path)
    assert list(summary.columns) == SUMMARY_COLUMNS
    assert len(summary) == 2 * 4
    assert set(summary["variant"]) == {"EKF", "CKF", "AEKF-MAPMLE", "ACKF-MAPMLE"}
    assert (summary["runs"] == 2).all()
    assert (summary["track_loss_runs"] == 3).all()
    baseline = summary[summary["variant"] == "EKF"]
    np.testing.assert_allclose(baseline["rel_time"], 1.0)
    assert summary["median_vb_iterations"].isna().all()

    timeseries = pd.read_csv(outputs.timeseries_path)
    assert len(timeseries) == 8 * 361
    assert timeseries["time_min"].max() == pytest.approx(30.0)
    np.testing.assert_allclose(timeseries["sigma_theta_hat"] ** 2, timeseries["mean_R_hat"])

    assert outputs.runs_path == os.path.join(tmp_path, RUNS_FILE)
    runs = pd.read_csv(outputs.runs_path)
    assert len(runs) == 8 * 3 * 361


def test_campaign_is_reproducible(tmp_path, small_matrix: RunMatrix):
    first = run_campaign(small_matrix, os.path.join(tmp_path, "first"))
    second = run_campaign(replace(small_matrix, num_workers=2), os.path.join(tmp_path, "second"))

    assert first.runs_path is None
    assert read_file(first.timeseries_path) == read_file(second.timeseries_path)
    pd.testing.assert_frame_equal(
        pd.read_csv(first.summary_path).drop(columns=WALL_TIME_COLUMNS),
        pd.read_csv(second.summary_path).drop(columns=WALL_TIME_COLUMNS),
    )
