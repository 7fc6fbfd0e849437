import json

import numpy as np
import pytest

from pilotwave import config
from pilotwave.cli import main

SMALL = {
    "evolve": [],
    "trajectories": ["ensemble.count=50"],
    "equivariance": ["ensemble.count=300"],
    "fieldmodes": ["ensemble.count=300", "modes.times=0.5"],
    "bounds": [],
    "sterngerlach": ["ensemble.count=200", "classify.trace_count=3"],
    "branching": ["branching.runs=100", "branching.trace_steps=4"],
}


def _command(preset):
    head = preset.split("_")[0]
    return "sterngerlach" if head == "sterngerlach" else head


def _run(tmp_path, *argv):
    return main(list(argv) + ["--out", str(tmp_path), "--quiet", "--threads", "1"])


def test_bounds_preset_reports_threshold(tmp_path):
    assert _run(tmp_path, "bounds", "--config", "bounds_euler") == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    euler = rep["bounds"][0]
    assert euler["bound"] == "euler-angle"
    assert euler["threshold"] == pytest.approx(1e15)
    assert euler["input_units"]["rho"] == "m^-3"
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["exit_status"] == 0 and man["outputs"][0]["file"] == "report.json"


def test_si_prefixed_lengths(tmp_path):
    cfg = config.load("[bounds]\na = 1 fm\nL = 2.5 km\n")
    assert cfg["bounds"]["a"] == pytest.approx(1e-15)
    assert cfg["bounds"]["L"] == pytest.approx(2500.0)
    with pytest.raises(config.ConfigError):
        config.load("[bounds]\na = 1 kg\n")
    assert _run(tmp_path, "bounds", "--config", "bounds_euler_nuclear") == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["bounds"][0]["threshold"] == pytest.approx(1e-5)


def test_zero_duration_equivariance(tmp_path):
    status = _run(tmp_path, "equivariance", "--set", "run.times=0", "--set", "ensemble.count=500")
    assert status == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["times"] == [0.0] and rep["passed"] == [True]


@pytest.mark.parametrize(
    "extra",
    [["--set", "grid.bogus=1"], ["--set", "nosuch.key=1"], ["--set", "noequals"], ["--config", "missing_preset"],
     ["--set", "grid.points=3"]],
)
def test_invalid_input_exit_code(tmp_path, extra):
    assert _run(tmp_path, "evolve", *extra) == 1


def test_negative_control_exit_code(tmp_path):
    status = _run(tmp_path, "equivariance", "--set", "equivariance.velocity_scale=1.5", "--set", "ensemble.count=2000")
    assert status == 3


def test_same_seed_gives_identical_outputs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["trajectories", "--config", "trajectories_free", "--set", "ensemble.count=40", "--seed", "9"]
    assert main(args + ["--out", str(a), "--quiet"]) == 0
    assert main(args + ["--out", str(b), "--quiet", "--threads", "3"]) == 0
    for name in ("trajectories.dat", "report.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ha = json.loads((a / "manifest.json").read_text())["outputs"]
    hb = json.loads((b / "manifest.json").read_text())["outputs"]
    assert ha == hb


def test_config_hash_ignores_key_order():
    one = config.load("[packet]\nwidth = 0.7\ncenter = 1\n[grid]\npoints = 512\n")
    two = config.load("[grid]\npoints = 512\n[packet]\ncenter = 1\nwidth = 0.7\n")
    assert config.config_hash(one) == config.config_hash(two)
    assert config.config_hash(one) != config.config_hash(config.load())


def test_table_header_carries_units(tmp_path):
    assert _run(tmp_path, "evolve", "--config", "evolve_free", "--set", "run.times=0.1") == 0
    head = (tmp_path / "state.dat").read_text().splitlines()[0]
    assert head.startswith("#") and "[" in head


@pytest.mark.parametrize("preset", config.preset_names())
def test_every_preset_runs(tmp_path, preset):
    cmd = _command(preset)
    extra = []
    for item in SMALL[cmd]:
        extra += ["--set", item]
    if preset == "sterngerlach_2d":
        extra += ["--set", "ensemble.count=100"]
    status = _run(tmp_path, cmd, "--config", preset, *extra)
    assert status == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["command"] == cmd
    for entry in man["outputs"]:
        assert (tmp_path / entry["file"]).exists()
    if cmd == "sterngerlach":
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["max_norm_drift"] < 1e-8
        rows = np.loadtxt(tmp_path / "outcomes.dat")
        assert set(np.unique(rows[:, -1])) <= {-1.0, 1.0}
