"""Plot data for the three-panel trajectory figure: Q against s, Q against t, t against s."""

import glob
import logging
import os

import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from trajzoom.errors import OutputError
from trajzoom.utils import LIMIT_COLUMNS, TRAJECTORY_COLUMNS, read_csv, write_csv

logger = logging.getLogger(__name__)

PLOT_COLUMNS = ["trajectory", "s", "t", "Q"]

PANELS = (
    ("s", "Q", "Q in real time s"),
    ("t", "Q", "Q in effective time t"),
    ("s", "t", "Effective time t against real time s"),
)

COLORS = ["rgb(67, 0, 153)", "rgb(145, 125, 185)", "rgb(180, 180, 180)"]


def trajectory_files(input_dir):
    return sorted(glob.glob(os.path.join(input_dir, "trajectory_*.csv")))


def _columns_for(path):
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
    return LIMIT_COLUMNS if "L" in header or "U" in header else TRAJECTORY_COLUMNS


def load_plotdata(files):
    """Stack trajectory CSVs into one frame with columns trajectory, s, t, Q."""
    frames = []
    for path in files:
        df = read_csv(path, _columns_for(path))
        name = os.path.splitext(os.path.basename(path))[0]
        frames.append(pd.DataFrame({"trajectory": name, "s": df["s"], "t": df["t"], "Q": df["Q"]}))
    if not frames:
        raise OutputError("NO_TRAJECTORIES", "no trajectory_*.csv files to plot")
    return pd.concat(frames, ignore_index=True)[PLOT_COLUMNS]


def build_figure(data):
    fig = make_subplots(rows=3, cols=1, subplot_titles=[title for _, _, title in PANELS], vertical_spacing=0.08)
    for i, (name, group) in enumerate(data.groupby("trajectory", sort=True)):
        color = COLORS[i % len(COLORS)]
        for row, (x, y, _) in enumerate(PANELS, start=1):
            fig.add_trace(
                go.Scattergl(
                    x=group[x],
                    y=group[y],
                    mode="lines",
                    name=name,
                    legendgroup=name,
                    showlegend=row == 1,
                    line=dict(color=color, width=1),
                ),
                row=row,
                col=1,
            )
    for row, (x, y, _) in enumerate(PANELS, start=1):
        fig.update_xaxes(title_text=x, row=row, col=1)
        fig.update_yaxes(title_text=y, row=row, col=1)
    fig.update_layout(template="plotly_white", height=1100, legend_title_text="Trajectory", title_font_size=16)
    return fig


def emit_plotdata(input_dir, out_file, html_file=None):
    """Write the aligned plot data of every trajectory in ``input_dir``; optionally the figure too."""
    if not os.path.isdir(input_dir):
        raise FileNotFoundError(f"Directory not found: {input_dir}")
    data = load_plotdata(trajectory_files(input_dir))
    write_csv(data, out_file)
    logger.info("Plot data saved to: %s", out_file)
    if html_file is not None:
        os.makedirs(os.path.dirname(os.path.abspath(html_file)), exist_ok=True)
        build_figure(data).write_html(html_file)
        logger.info("Interactive plot saved to: %s", html_file)
    return data
