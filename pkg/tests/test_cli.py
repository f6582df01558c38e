import csv
import json
import os
import subprocess
import sys

import pytest

from conftest import TINY_CONFIG
from visioncomm.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("cli") / "run")
    assert main(["run", "--config", TINY_CONFIG, "--out", out]) == EXIT_OK
    return out


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_run_writes_every_artifact(tiny_run):
    for rel in ["config.json", "data/manifest.json", "data/train.ndjson", "models/uman_m1.npz",
                "models/uman_m3.npz", "models/mcumm.npz", "models/vran.npz", "models/vran_curve.csv",
                "metrics/matching_metrics.csv", "metrics/allocation_metrics.csv",
                "plots/umac_vs_m.svg", "plots/atrr_by_users.svg", "plots/loss_curves.svg", "timing.csv"]:
        assert os.path.exists(os.path.join(tiny_run, rel)), rel


def test_metrics_content(tiny_run):
    rows = read_rows(os.path.join(tiny_run, "metrics", "allocation_metrics.csv"))
    atrr = {(r["method"], r["U"]): float(r["atrr"]) for r in rows}
    assert atrr[("BTRAM", "all")] == 1.0
    assert {m for m, _ in atrr} == {"BTRAM", "VBRAM", "NBBRAM", "RRAM"}
    rows = read_rows(os.path.join(tiny_run, "metrics", "matching_metrics.csv"))
    methods = {(r["method"], r["M"]) for r in rows}
    assert {("3DUMM", "1"), ("3DUMM", "3"), ("MCUMM", "1")} <= methods
    assert all(0.0 <= float(r["umac"]) <= 1.0 for r in rows)


def test_saved_config_is_reused(tiny_run, capsys):
    # no --config: the run directory's config.json drives evaluation again
    assert main(["eval-matching", "--out", tiny_run]) == EXIT_OK
    assert "3DUMM" in capsys.readouterr().out
    with open(os.path.join(tiny_run, "config.json")) as f:
        assert json.load(f)["seed"] == 5


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"gamma": 7}')
    assert main(["gen-dataset", "--config", str(bad), "--out", str(tmp_path / "r")]) == EXIT_CONFIG
    assert main(["gen-dataset", "--threads", "0", "--out", str(tmp_path / "r")]) == EXIT_CONFIG
    assert main(["train-uman", "--config", TINY_CONFIG, "--m", "5", "--out", str(tmp_path / "r")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_missing_inputs_exit_3(tmp_path, capsys):
    empty = str(tmp_path / "empty")
    assert main(["train-uman", "--config", TINY_CONFIG, "--out", empty]) == EXIT_RUNTIME
    assert main(["eval-allocation", "--config", TINY_CONFIG, "--out", empty]) == EXIT_RUNTIME
    assert main(["report", "--config", TINY_CONFIG, "--out", empty]) == EXIT_RUNTIME
    assert "error" in capsys.readouterr().err


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "visioncomm.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ["gen-dataset", "train-uman", "train-mcumm", "train-vran", "eval-matching",
                "eval-allocation", "report", "run"]:
        assert cmd in res.stdout
