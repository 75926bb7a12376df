"""Run configuration: a flat key=value text file.

One pair per line, ``#`` starts a comment, blank lines are ignored::

    mode=sde
    gamma=200
    lambda=1
    p=0.5
    ds=1e-5
    horizon=8
    n_traj=1
    master_seed=42
    output_dir=out

``TRAJZOOM_SEED`` in the environment overrides ``master_seed``.
"""

import dataclasses
import logging
import math
import os
from dataclasses import dataclass
from typing import Tuple, Union

from trajzoom.errors import ConfigError, ParameterError
from trajzoom.limit import BOUNDARIES, audit_eps
from trajzoom.model import INFINITE, Gamma, ModelParams, n_steps_for, validate

logger = logging.getLogger(__name__)

SEED_ENV = "TRAJZOOM_SEED"

MODES = (
    "discrete",
    "sde",
    "limit",
    "stats-excursions",
    "stats-levy",
    "stats-spikes",
    "stats-entropy",
    "stats-convergence",
)

# engine regime each mode runs in; stats-entropy runs in either
MODE_REGIMES = {
    "discrete": "discrete",
    "sde": "sde",
    "limit": "limit",
    "stats-excursions": "limit",
    "stats-levy": "limit",
    "stats-spikes": "sde",
    "stats-entropy": None,
    "stats-convergence": "sde",
}

DEFAULT_HORIZONS = {
    "discrete": 8.0,
    "sde": 8.0,
    "limit": 2.0,
    "stats-excursions": 8.0,
    "stats-levy": 4.0,
    "stats-spikes": 10.0,
    "stats-entropy": 10.0,
    "stats-convergence": 40.0,
}

# distribution-level modes need a fine effective-time grid; on coarser grids
# the pushing terms run low by about 0.58 sqrt(dt)
DEFAULT_DTS = {
    "stats-excursions": 1e-6,
    "stats-levy": 1e-6,
    "stats-entropy": 1e-6,
}

# grid points per batch when batch_size is not given
STEP_BUDGET = 16_000_000
MAX_BATCH = 64

# key in the file -> ModelParams field
PARAM_KEYS = {
    "lambda": "lam",
    "p": "p",
    "gamma": "gamma",
    "epsilon": "epsilon",
    "ds": "ds",
    "dt": "dt",
    "q0": "q0",
}


@dataclass(frozen=True)
class RunConfig:
    mode: str
    params: ModelParams
    n_traj: int = 1
    horizon: float = 8.0
    output_dir: str = "out"
    master_seed: int = 0
    effective_time_normalization: int = 2
    boundaries: str = "both"
    batch_size: int = 64
    sigmas: Tuple[float, ...] = (0.5, 1.0, 2.0)
    floor: float = 0.02
    m_low: float = 0.45
    m_high: float = 0.55
    spike_m: float = 0.5
    plateau_cutoff: float = 0.05
    s1: float = 0.5
    s2: float = 1.0
    s_query: float = 1.0
    min_samples: int = 1000
    mollifier_eps: float = 0.1
    lag: int = 10
    gammas: Tuple[float, ...] = (50.0, 200.0, 800.0)

    @property
    def regime(self):
        return MODE_REGIMES[self.mode]

    def items(self):
        """Every setting as (file key, text value), in file order."""
        out = {"mode": self.mode}
        for key, name in PARAM_KEYS.items():
            value = getattr(self.params, name)
            if value is None:
                continue
            out[key] = "inf" if value is INFINITE else _format(value)
        for f in dataclasses.fields(self):
            if f.name in ("mode", "params"):
                continue
            out[f.name] = _format(getattr(self, f.name))
        return out


def _format(value):
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _to_float(text):
    return float(text)


def _to_int(text):
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def _to_seed(text):
    return int(text, 0)


def _to_floats(text):
    values = tuple(float(v) for v in text.split(",") if v.strip())
    if not values:
        raise ValueError("empty list")
    return values


def _to_gamma(text) -> Union[float, Gamma]:
    if text.lower() in ("inf", "infinite", "infinity"):
        return INFINITE
    return float(text)


def _to_optional_float(text):
    return None if text.lower() in ("", "none", "p") else float(text)


CONVERTERS = {
    "mode": str,
    "lambda": _to_float,
    "p": _to_float,
    "gamma": _to_gamma,
    "epsilon": _to_float,
    "ds": _to_float,
    "dt": _to_float,
    "q0": _to_optional_float,
    "n_traj": _to_int,
    "horizon": _to_float,
    "output_dir": str,
    "master_seed": _to_seed,
    "effective_time_normalization": _to_int,
    "boundaries": str,
    "batch_size": _to_int,
    "sigmas": _to_floats,
    "floor": _to_float,
    "m_low": _to_float,
    "m_high": _to_float,
    "spike_m": _to_float,
    "plateau_cutoff": _to_float,
    "s1": _to_float,
    "s2": _to_float,
    "s_query": _to_float,
    "min_samples": _to_int,
    "mollifier_eps": _to_float,
    "lag": _to_int,
    "gammas": _to_floats,
}


def _read_pairs(text):
    """Return {key: (value, line_number)}."""
    pairs = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("PARSE_ERROR", f"expected key=value, got {line!r}", line=number)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("PARSE_ERROR", "empty key", line=number)
        if key not in CONVERTERS:
            raise ConfigError("UNKNOWN_KEY", f"unknown key {key!r}", line=number)
        if key in pairs:
            raise ConfigError("PARSE_ERROR", f"duplicate key {key!r} (first on line {pairs[key][1]})", line=number)
        try:
            pairs[key] = (CONVERTERS[key](value), number)
        except ValueError as e:
            raise ConfigError("PARSE_ERROR", f"bad value for {key!r}: {e}", line=number) from e
    return pairs


def _check(condition, field, message, lines):
    if not condition:
        raise ParameterError("OUT_OF_RANGE", field, message, line=lines.get(field))


def _check_settings(config, lines):
    _check(config.n_traj >= 1, "n_traj", f"must be >= 1, got {config.n_traj}", lines)
    _check(math.isfinite(config.horizon) and config.horizon > 0, "horizon", "must be a positive number", lines)
    _check(0 <= config.master_seed < 2 ** 64, "master_seed", "must be a 64-bit unsigned integer", lines)
    _check(config.effective_time_normalization in (1, 2), "effective_time_normalization", "must be 1 or 2", lines)
    _check(config.boundaries in BOUNDARIES, "boundaries", f"must be one of {BOUNDARIES}", lines)
    _check(config.batch_size >= 1, "batch_size", "must be >= 1", lines)
    _check(all(s >= 0 for s in config.sigmas), "sigmas", "must be non-negative", lines)
    _check(0 < config.floor < 0.5, "floor", "must lie in (0, 0.5)", lines)
    _check(0 < config.m_low < config.m_high <= 1, "m_high", "need 0 < m_low < m_high <= 1", lines)
    _check(0 < config.spike_m < 1, "spike_m", "must lie in (0, 1)", lines)
    _check(0 < config.plateau_cutoff < 1, "plateau_cutoff", "must lie in (0, 1)", lines)
    _check(0 < config.s1 < config.s2, "s2", "need 0 < s1 < s2", lines)
    _check(config.s_query > 0, "s_query", "must be > 0", lines)
    _check(config.min_samples >= 1, "min_samples", "must be >= 1", lines)
    _check(config.mollifier_eps > 0, "mollifier_eps", "must be > 0", lines)
    _check(config.lag >= 1, "lag", "must be >= 1", lines)
    _check(all(math.isfinite(g) and g > 0 for g in config.gammas), "gammas", "must be finite positive rates", lines)


def default_batch_size(mode, params, horizon):
    """Paths per batch so that one batch holds about STEP_BUDGET grid points."""
    regime = MODE_REGIMES[mode] or ("limit" if params.is_limit else "sde")
    step = params.dt if regime == "limit" else params.ds
    return max(1, min(MAX_BATCH, STEP_BUDGET // n_steps_for(horizon, step)))


def parse_config(text, mode=None):
    """Parse and validate a configuration.

    ``mode`` (from the command line) fills in a missing ``mode=`` line and
    must agree with it when both are given.
    """
    pairs = _read_pairs(text)
    lines = {key: line for key, (_, line) in pairs.items()}
    values = {key: value for key, (value, _) in pairs.items()}

    file_mode = values.pop("mode", None)
    if file_mode is not None and mode is not None and file_mode != mode:
        raise ConfigError("PARSE_ERROR", f"mode {file_mode!r} does not match {mode!r}", line=lines["mode"])
    mode = file_mode or mode

    param_values = {PARAM_KEYS[key]: values.pop(key) for key in list(values) if key in PARAM_KEYS}
    if "gamma" not in param_values:
        param_values["gamma"] = INFINITE if MODE_REGIMES.get(mode) in ("limit", None) else 200.0
    if "dt" not in param_values and mode in DEFAULT_DTS:
        param_values["dt"] = DEFAULT_DTS[mode]
    params = ModelParams(**param_values)
    try:
        validate(params)
    except ParameterError as e:
        raise ParameterError(e.code, e.field, e.detail, line=lines.get(e.field)) from e

    if mode is None:
        raise ConfigError("PARSE_ERROR", "missing mode")
    if mode not in MODES:
        raise ConfigError("PARSE_ERROR", f"unknown mode {mode!r}; expected one of {', '.join(MODES)}", line=lines.get("mode"))
    try:
        validate(params, MODE_REGIMES[mode])
    except ParameterError as e:
        raise ParameterError(e.code, e.field, e.detail, line=lines.get(e.field)) from e

    values.setdefault("horizon", DEFAULT_HORIZONS[mode])
    if math.isfinite(values["horizon"]) and values["horizon"] > 0:
        values.setdefault("batch_size", default_batch_size(mode, params, values["horizon"]))
    values.setdefault("mollifier_eps", audit_eps(params.dt))
    config = RunConfig(mode=mode, params=params, **values)
    _check_settings(config, lines)
    return config


def apply_seed_override(config, environ=None):
    environ = os.environ if environ is None else environ
    raw = environ.get(SEED_ENV)
    if raw is None or not raw.strip():
        return config
    try:
        seed = _to_seed(raw.strip())
    except ValueError as e:
        raise ConfigError("PARSE_ERROR", f"{SEED_ENV}={raw!r} is not an integer") from e
    _check(0 <= seed < 2 ** 64, "master_seed", f"{SEED_ENV} must be a 64-bit unsigned integer", {})
    logger.info("%s overrides master_seed: %d -> %d", SEED_ENV, config.master_seed, seed)
    return dataclasses.replace(config, master_seed=seed)


def load_config(path, mode=None, environ=None):
    if not os.path.exists(path):
        raise ConfigError("PARSE_ERROR", f"configuration file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        config = parse_config(f.read(), mode=mode)
    return apply_seed_override(config, environ)
