import os

import pytest

import app
from trajzoom import runner
from trajzoom.runner import MANIFEST_FILE


def manifest_of(output_dir):
    with open(os.path.join(output_dir, MANIFEST_FILE), encoding="utf-8") as f:
        return dict(line.rstrip("\n").split("=", 1) for line in f)


@pytest.fixture(autouse=True)
def no_seed_override(monkeypatch):
    monkeypatch.delenv("TRAJZOOM_SEED", raising=False)


def test_simulate_then_plot(tmp_path, write_config):
    config = write_config(mode="limit", dt="1e-3", horizon=0.5, n_traj=2)
    assert app.main(["simulate", "limit", "--config", str(config), "--threads", "2"]) == app.EXIT_OK
    out = tmp_path / "out"
    assert sorted(os.listdir(out)) == ["manifest.txt", "statistics.csv", "trajectory_000000.csv", "trajectory_000001.csv"]
    code = app.main(["plotdata", "--in", str(out), "--out", str(tmp_path / "plot.csv"), "--html", str(tmp_path / "plot.html")])
    assert code == app.EXIT_OK
    assert (tmp_path / "plot.csv").exists() and (tmp_path / "plot.html").exists()


def test_mode_comes_from_the_command_line(tmp_path, write_config):
    config = write_config(dt="1e-3", horizon=0.2)
    assert app.main(["simulate", "limit", "--config", str(config)]) == app.EXIT_OK
    assert manifest_of(tmp_path / "out")["mode"] == "limit"


@pytest.mark.parametrize(
    "values",
    [
        {"mode": "limit", "gamma": -1},
        {"mode": "limit", "colour": "blue"},
        {"mode": "sde", "gamma": "inf"},
        {"mode": "sde", "gamma": 200, "ds": 0.01},
    ],
)
def test_configuration_errors_exit_2(write_config, values):
    config = write_config(**values)
    mode = values["mode"]
    assert app.main(["simulate", mode, "--config", str(config)]) == app.EXIT_CONFIG


def test_missing_config_file_exits_2(tmp_path):
    assert app.main(["simulate", "limit", "--config", str(tmp_path / "none.txt")]) == app.EXIT_CONFIG


def test_plot_errors_exit_3(tmp_path):
    assert app.main(["plotdata", "--in", str(tmp_path / "absent"), "--out", str(tmp_path / "plot.csv")]) == app.EXIT_ENGINE
    assert app.main(["plotdata", "--in", str(tmp_path), "--out", str(tmp_path / "plot.csv")]) == app.EXIT_ENGINE


def test_failed_check_exits_4(write_config, monkeypatch):
    monkeypatch.setattr(runner, "SKOROKHOD_TOLERANCE", -1.0)
    config = write_config(mode="limit", dt="1e-2", horizon=0.1)
    assert app.main(["simulate", "limit", "--config", str(config)]) == app.EXIT_CONSISTENCY


def test_seed_override_from_environment(tmp_path, write_config, monkeypatch):
    monkeypatch.setenv("TRAJZOOM_SEED", "123")
    config = write_config(mode="limit", dt="1e-2", horizon=0.1, master_seed=4)
    assert app.main(["simulate", "limit", "--config", str(config)]) == app.EXIT_OK
    assert manifest_of(tmp_path / "out")["master_seed"] == "123"


def test_unknown_mode_is_rejected_by_the_parser():
    with pytest.raises(SystemExit):
        app.main(["simulate", "walk", "--config", "run.txt"])
