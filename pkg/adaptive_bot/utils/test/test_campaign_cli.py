import os
import sys

import pandas as pd
import pytest
from pyprojroot import here as project_root

sys.path.insert(0, str(project_root()))

from adaptive_bot.campaign import main, parse_command_line
from adaptive_bot.utils.campaign_utils import SUMMARY_FILE, TIMESERIES_FILE
from adaptive_bot.utils.cli_utils import (
    OUT_DIR_ENV_VAR,
    resolve_out_dir,
    run_matrix_from_args,
    str2bool,
)


def test_show_config(capsys):
    assert main(["show-config", "--preset", "scenario2", "--case", "2"]) == 0
    out = capsys.readouterr().out
    assert "10 km" in out
    assert "(15 kn)" in out
    assert "Campaign" in out and "Filter settings" in out
    assert "3 - n" in out


def test_run_writes_summary(tmp_path):
    out_dir = os.path.join(tmp_path, "campaign")
    argv = ["run", "--scenario", "1", "--case", "1", "--filter", "ekf", "--filter", "ckf"]
    argv += ["--mode", "nonadaptive", "--runs", "2", "--out", out_dir]
    assert main(argv) == 0

    summary = pd.read_csv(os.path.join(out_dir, SUMMARY_FILE))
    assert "track_loss_pct" in summary.columns
    assert list(summary["variant"]) == ["EKF", "CKF"]
    assert (summary["track_loss_runs"] == 2).all()
    assert os.path.exists(os.path.join(out_dir, TIMESERIES_FILE))
    assert os.path.exists(os.path.join(out_dir, "campaign.log"))


def test_command_line_overrides():
    args = parse_command_line(
        ["run", "--runs", "7", "--track-loss-runs", "9", "--zeta", "1e-4", "--mode", "vb"]
    )
    matrix = run_matrix_from_args(args)
    assert (matrix.runs, matrix.track_loss_runs) == (7, 9)
    assert matrix.filter_settings.zeta == 1e-4
    assert matrix.modes == ("vb",)
    assert matrix.families == ("ekf", "ckf", "ukf", "ghf")
    assert not matrix.write_run_diagnostics

    args = parse_command_line(["run", "--write-run-diagnostics", "--seed", "3"])
    matrix = run_matrix_from_args(args)
    assert matrix.write_run_diagnostics
    assert matrix.base_seed == 3


def test_oracle_command(capsys):
    assert main(["oracle"]) == 0
    assert "conjugate posterior location" in capsys.readouterr().out


def test_invalid_arguments_exit():
    with pytest.raises(SystemExit) as exc_info:
        main(["run", "--no-such-flag"])
    assert exc_info.value.code != 0
    with pytest.raises(SystemExit):
        main(["run", "--filter", "pf"])
    with pytest.raises(SystemExit):
        main([])


def test_out_dir_resolution(monkeypatch):
    monkeypatch.setenv(OUT_DIR_ENV_VAR, "/tmp/from-env")
    assert resolve_out_dir("explicit") == "explicit"
    assert resolve_out_dir(None) == "/tmp/from-env"
    monkeypatch.delenv(OUT_DIR_ENV_VAR)
    assert os.path.basename(resolve_out_dir(None)).startswith("AdaptiveBOT_")


def test_str2bool():
    assert str2bool("yes") and str2bool(True)
    assert not str2bool("0")
    with pytest.raises(Exception):
        str2bool("maybe")
