import pandas as pd
import pytest

from trajzoom.errors import OutputError
from trajzoom.plotting import PLOT_COLUMNS, build_figure, emit_plotdata, load_plotdata, trajectory_files
from trajzoom.utils import write_csv


def write_trajectory(directory, index, frame):
    return write_csv(frame, str(directory / f"trajectory_{index:06d}.csv"))


def test_constant_q_is_aligned_across_panels(tmp_path):
    frame = pd.DataFrame({"s": [0.0, 0.1, 0.2], "Q": [1.0, 1.0, 1.0], "t": [0.0, 0.0, 0.0]})
    write_trajectory(tmp_path, 0, frame)
    data = emit_plotdata(str(tmp_path), str(tmp_path / "plot.csv"))
    assert list(data.columns) == PLOT_COLUMNS
    assert data["Q"].tolist() == [1.0, 1.0, 1.0]
    assert data["t"].tolist() == [0.0, 0.0, 0.0]
    written = pd.read_csv(tmp_path / "plot.csv")
    assert written["trajectory"].unique().tolist() == ["trajectory_000000"]
    assert written["s"].tolist() == pytest.approx([0.0, 0.1, 0.2])


def test_limit_files_are_plotted_against_their_clock(tmp_path):
    frame = pd.DataFrame(
        {"t": [0.0, 0.5], "Q": [0.0, 0.3], "B": [0.0, 0.3], "L": [0.0, 0.0], "U": [0.0, 0.0], "s": [0.0, 0.0]}
    )
    write_trajectory(tmp_path, 3, frame)
    data = load_plotdata(trajectory_files(str(tmp_path)))
    assert data["t"].tolist() == [0.0, 0.5]
    assert data["s"].tolist() == [0.0, 0.0]


def test_missing_column(tmp_path):
    write_trajectory(tmp_path, 0, pd.DataFrame({"s": [0.0], "Q": [0.5]}))
    with pytest.raises(OutputError) as info:
        load_plotdata(trajectory_files(str(tmp_path)))
    assert info.value.code == "MISSING_COLUMN"


def test_no_trajectories(tmp_path):
    (tmp_path / "statistics.csv").write_text("a\n1\n")
    with pytest.raises(OutputError) as info:
        emit_plotdata(str(tmp_path), str(tmp_path / "plot.csv"))
    assert info.value.code == "NO_TRAJECTORIES"
    with pytest.raises(FileNotFoundError):
        emit_plotdata(str(tmp_path / "absent"), str(tmp_path / "plot.csv"))


def test_figure_has_one_trace_per_trajectory_and_panel(tmp_path):
    for i in range(2):
        write_trajectory(tmp_path, i, pd.DataFrame({"s": [0.0, 1.0], "Q": [0.5, 0.1 * i], "t": [0.0, 0.2]}))
    data = emit_plotdata(str(tmp_path), str(tmp_path / "plot.csv"), str(tmp_path / "html" / "plot.html"))
    assert (tmp_path / "html" / "plot.html").stat().st_size > 0
    fig = build_figure(data)
    assert len(fig.data) == 6
    assert sum(trace.showlegend for trace in fig.data) == 2
