"""Domain types shared by the engines: parameters, seeds and trajectories."""

import enum
import logging
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import pandas as pd

from trajzoom.errors import ParameterError

logger = logging.getLogger(__name__)


class Gamma(enum.Enum):
    """Symbolic measurement rates."""

    INFINITE = "infinite"


INFINITE = Gamma.INFINITE

REGIMES = ("discrete", "sde", "limit")
FIELD_NAMES = {"lam": "lambda"}


@dataclass(frozen=True)
class ModelParams:
    """Physical constants and numerical steps of a monitored qubit.

    ``lam`` is the thermal relaxation rate, ``p`` the equilibrium ground-state
    population, ``gamma`` the measurement rate (or ``INFINITE``), ``epsilon``
    the strength of one discrete weak measurement, ``ds`` the real-time step
    and ``dt`` the effective-time step. ``q0`` is the initial ground-state
    probability; ``None`` starts the system at ``p``.
    """

    lam: float = 1.0
    p: float = 0.5
    gamma: Union[float, Gamma] = 200.0
    epsilon: float = 0.3
    ds: float = 1e-5
    dt: float = 1e-4
    q0: Optional[float] = None

    @property
    def initial_q(self):
        return self.p if self.q0 is None else self.q0

    @property
    def is_limit(self):
        return self.gamma is INFINITE


def _finite_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def validate(params, regime=None):
    """Return ``params`` unchanged if every invariant holds.

    ``regime`` ties γ to an engine: ``"sde"`` needs a finite rate, ``"limit"``
    needs ``INFINITE``; ``"discrete"`` and ``None`` accept either.
    """
    for name in ("lam", "epsilon", "ds", "dt", "p"):
        if not _finite_number(getattr(params, name)):
            raise ParameterError("OUT_OF_RANGE", FIELD_NAMES.get(name, name), "must be a finite number")
    if params.lam <= 0:
        raise ParameterError("OUT_OF_RANGE", "lambda", f"must be > 0, got {params.lam}")
    if not 0 < params.p < 1:
        raise ParameterError("OUT_OF_RANGE", "p", f"must lie in (0, 1), got {params.p}")
    if not 0 < params.epsilon < 1:
        raise ParameterError("OUT_OF_RANGE", "epsilon", f"must lie in (0, 1), got {params.epsilon}")
    if params.ds <= 0:
        raise ParameterError("OUT_OF_RANGE", "ds", f"must be > 0, got {params.ds}")
    if params.dt <= 0:
        raise ParameterError("OUT_OF_RANGE", "dt", f"must be > 0, got {params.dt}")
    if params.gamma is not INFINITE:
        if not _finite_number(params.gamma) or params.gamma <= 0:
            raise ParameterError(
                "OUT_OF_RANGE", "gamma", f"must be a finite positive rate or INFINITE, got {params.gamma!r}"
            )
    if params.q0 is not None and not (_finite_number(params.q0) and 0 <= params.q0 <= 1):
        raise ParameterError("OUT_OF_RANGE", "q0", f"must lie in [0, 1], got {params.q0!r}")

    if regime is not None and regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    if regime == "sde" and params.gamma is INFINITE:
        raise ParameterError("INCONSISTENT", "gamma", "the finite-rate SDE engine cannot run at gamma=INFINITE")
    if regime == "limit" and params.gamma is not INFINITE:
        raise ParameterError("INCONSISTENT", "gamma", "the limit engine requires gamma=INFINITE")
    return params


@dataclass(frozen=True)
class SeedSpec:
    """Address of one trajectory's random stream."""

    master_seed: int
    trajectory_index: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed < 2 ** 64:
            raise ParameterError("OUT_OF_RANGE", "master_seed", "must be a 64-bit unsigned integer")
        if self.trajectory_index < 0:
            raise ParameterError("OUT_OF_RANGE", "trajectory_index", "must be non-negative")

    def seed_sequence(self):
        return np.random.SeedSequence(entropy=self.master_seed, spawn_key=(self.trajectory_index,))

    def generator(self):
        return np.random.default_rng(self.seed_sequence())

    def describe(self):
        return f"SeedSequence(entropy={self.master_seed}, spawn_key=({self.trajectory_index},))"


def seeds_for(master_seed, n_traj, start=0):
    return [SeedSpec(master_seed, i) for i in range(start, start + n_traj)]


def _frozen(values):
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Trajectory:
    """A sampled path of Q on a uniform real-time grid with its effective time."""

    s_grid: np.ndarray
    q: np.ndarray
    t_cum: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "s_grid", _frozen(self.s_grid))
        object.__setattr__(self, "q", _frozen(self.q))
        object.__setattr__(self, "t_cum", _frozen(self.t_cum))
        n = len(self.s_grid)
        if n == 0 or len(self.q) != n or len(self.t_cum) != n:
            raise ValueError("s_grid, q and t_cum must be non-empty and aligned")
        if np.any(self.q < 0) or np.any(self.q > 1):
            raise ValueError("q must lie in [0, 1]")
        if self.t_cum[0] != 0 or np.any(np.diff(self.t_cum) < 0):
            raise ValueError("t_cum must start at 0 and be non-decreasing")
        if n > 1:
            steps = np.diff(self.s_grid)
            if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-6, atol=0):
                raise ValueError("s_grid must be strictly increasing with uniform spacing")

    @property
    def ds(self):
        return float(self.s_grid[1] - self.s_grid[0]) if len(self.s_grid) > 1 else 0.0

    def to_frame(self):
        return pd.DataFrame({"s": self.s_grid, "Q": self.q, "t": self.t_cum})


def n_steps_for(horizon, step):
    """Number of grid steps covering ``horizon``; exact ratios are not rounded up."""
    ratio = horizon / step
    nearest = round(ratio)
    if abs(ratio - nearest) <= 1e-9 * max(1.0, ratio):
        return int(nearest)
    return int(math.ceil(ratio))
