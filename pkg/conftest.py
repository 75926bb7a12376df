import pytest

from trajzoom.model import INFINITE, ModelParams, SeedSpec


@pytest.fixture
def qubit_params():
    """lambda=1, p=0.5, gamma=200, epsilon=0.3, ds=1e-5."""
    return ModelParams(lam=1.0, p=0.5, gamma=200.0, epsilon=0.3, ds=1e-5)


@pytest.fixture
def limit_params():
    return ModelParams(lam=1.0, p=0.5, gamma=INFINITE, dt=1e-4)


@pytest.fixture
def seed():
    return SeedSpec(master_seed=42, trajectory_index=0)


@pytest.fixture
def write_config(tmp_path):
    """Write key=value lines to a config file under tmp_path; output goes to tmp_path/out."""

    def write(name="run.txt", output_dir=None, **values):
        values.setdefault("output_dir", str(output_dir or tmp_path / "out"))
        path = tmp_path / name
        path.write_text("".join(f"{key}={value}\n" for key, value in values.items()))
        return path

    return write
