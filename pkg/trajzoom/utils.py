"""CSV helpers shared by the runner and the plot-data emitter."""

import logging
import os

import pandas as pd

from trajzoom.errors import OutputError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

TRAJECTORY_COLUMNS = ("s", "Q", "t")
LIMIT_COLUMNS = ("t", "Q", "B", "L", "U", "s")


def write_csv(df, path):
    """Write ``df`` with a one-line header and full-precision floats."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.debug("CSV saved to: %s", path)
    return path


def read_csv(path, columns):
    """Read a CSV and check that every column in ``columns`` is present."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"File not found: {path}")
    df = pd.read_csv(path, float_precision="round_trip")
    missing = [column for column in columns if column not in df.columns]
    if missing:
        raise OutputError("MISSING_COLUMN", f"{os.path.basename(path)} lacks column(s) {', '.join(missing)}")
    return df


def write_key_values(values, path):
    """Write a flat key=value text file, one pair per line, in insertion order."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for key, value in values.items():
            f.write(f"{key}={value}\n")
    return path


def trajectory_file_name(index):
    return f"trajectory_{index:06d}.csv"
