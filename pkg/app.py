"""Command-line entry point.

    python app.py simulate <mode> --config <file> [--threads N] [--dump-paths]
    python app.py plotdata --in <dir> --out <file> [--html <file>]

Exit codes: 0 success, 2 configuration or parameter error, 3 engine or I/O
error, 4 failed internal check.
"""

import argparse
import logging
import sys

from trajzoom.config import MODES, load_config
from trajzoom.errors import ConfigError, ConsistencyError, ParameterError, TrajzoomError
from trajzoom.plotting import emit_plotdata
from trajzoom.runner import SimulationRunner

logger = logging.getLogger("trajzoom")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ENGINE = 3
EXIT_CONSISTENCY = 4


def build_parser():
    parser = argparse.ArgumentParser(prog="trajzoom", description="Monitored-qubit trajectories in real and effective time.")
    parser.add_argument("--verbose", action="store_true", help="Log debug messages.")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="Run an engine or a statistics mode.")
    simulate.add_argument("mode", choices=MODES)
    simulate.add_argument("--config", required=True, help="key=value configuration file.")
    simulate.add_argument("--threads", type=int, default=1, help="Batches run concurrently (default: 1).")
    simulate.add_argument("--dump-paths", action="store_true", help="Write every trajectory, not only the aggregate.")

    plotdata = commands.add_parser("plotdata", help="Emit three-panel plot data from trajectory CSVs.")
    plotdata.add_argument("--in", dest="input_dir", required=True, help="Directory of trajectory_*.csv files.")
    plotdata.add_argument("--out", required=True, help="Output CSV.")
    plotdata.add_argument("--html", default=None, help="Also write the figure as interactive HTML.")
    return parser


def run_command(args):
    if args.command == "simulate":
        config = load_config(args.config, mode=args.mode)
        SimulationRunner(config, threads=args.threads, dump_paths=args.dump_paths).run()
    else:
        emit_plotdata(args.input_dir, args.out, args.html)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        run_command(args)
    except (ConfigError, ParameterError) as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG
    except ConsistencyError as e:
        logger.error("Internal check failed: %s", e)
        return EXIT_CONSISTENCY
    except (TrajzoomError, OSError) as e:
        logger.error("Run failed: %s", e)
        return EXIT_ENGINE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
