"""Finite-rate continuous monitoring: Euler-Maruyama for

    dQ_s = lambda (p - Q_s) ds + sqrt(gamma) Q_s (1 - Q_s) dW_s

and the effective time t(s) = gamma * int Q^2 (1 - Q)^2 ds.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from trajzoom.errors import ParameterError, PathError
from trajzoom.model import Trajectory, n_steps_for, validate

logger = logging.getLogger(__name__)

# ds must resolve the boundary layer of width ~ gamma^-1/2.
STEP_GUARD = 0.1
NORMAL_CHUNK = 1 << 16


def _em_raw(q, params, xi):
    noise = math.sqrt(params.gamma * params.ds) * xi
    return q + params.lam * (params.p - q) * params.ds + q * (1 - q) * noise


def em_step(q, params, xi):
    """One Euler-Maruyama step from ``q`` with the standard normal draw ``xi``."""
    return np.clip(_em_raw(q, params, xi), 0.0, 1.0)


def check_step_guard(params):
    limit = STEP_GUARD / params.gamma
    if params.ds > limit:
        raise ParameterError(
            "OUT_OF_RANGE", "ds", f"ds={params.ds:g} does not resolve gamma={params.gamma:g}; need ds <= {limit:g}"
        )


def quadratic_variation_time(q):
    q = np.asarray(q, dtype=float)
    t = np.zeros(len(q))
    if len(q) > 1:
        t[1:] = np.cumsum(np.diff(q) ** 2)
    return t


@dataclass(frozen=True)
class SdePath:
    trajectory: Trajectory
    gamma: float
    increments_w: np.ndarray
    clamped_steps: int = 0

    @property
    def qv_time(self):
        return quadratic_variation_time(self.trajectory.q)

    def estimator_discrepancy(self):
        """Relative gap between the integral and quadratic-variation effective times."""
        integral = self.trajectory.t_cum[-1]
        qv = self.qv_time[-1]
        if integral == 0:
            return 0.0 if qv == 0 else math.inf
        return abs(qv - integral) / integral


def _standard_normals(rng, n):
    chunks = [rng.standard_normal(min(NORMAL_CHUNK, n - start)) for start in range(0, n, NORMAL_CHUNK)]
    return np.concatenate(chunks) if chunks else np.empty(0)


def run_sde_batch(params, seeds, horizon_s):
    """Integrate one path per seed, vectorised over the batch.

    Each path consumes only its own stream, so a path is bit-identical whether
    it runs alone or inside any batch.
    """
    validate(params, "sde")
    if horizon_s <= 0:
        raise ParameterError("OUT_OF_RANGE", "horizon", f"must be > 0, got {horizon_s}")
    check_step_guard(params)

    n_steps = n_steps_for(horizon_s, params.ds)
    xi = np.stack([_standard_normals(seed.generator(), n_steps) for seed in seeds])
    n_traj = len(seeds)
    q = np.empty((n_traj, n_steps + 1))
    t_cum = np.zeros((n_traj, n_steps + 1))
    q[:, 0] = params.initial_q
    clamped = np.zeros(n_traj, dtype=np.int64)
    rate = params.gamma * params.ds
    current = q[:, 0].copy()
    for k in range(n_steps):
        t_cum[:, k + 1] = t_cum[:, k] + rate * current ** 2 * (1 - current) ** 2
        raw = _em_raw(current, params, xi[:, k])
        clamped += (raw < 0) | (raw > 1)
        current = np.clip(raw, 0.0, 1.0)
        q[:, k + 1] = current

    s_grid = np.arange(n_steps + 1) * params.ds
    paths = []
    for i, seed in enumerate(seeds):
        path = SdePath(
            Trajectory(s_grid, q[i], t_cum[i]),
            params.gamma,
            xi[i] * math.sqrt(params.ds),
            int(clamped[i]),
        )
        if path.clamped_steps:
            logger.warning("%s: %d of %d steps clamped to [0, 1]", seed.describe(), path.clamped_steps, n_steps)
        paths.append(path)
    return paths


def run_sde(params, seed, horizon_s):
    return run_sde_batch(params, [seed], horizon_s)[0]


@dataclass(frozen=True)
class Reparametrized:
    """Q on a uniform effective-time grid with the companion real time s(t)."""

    t_grid: np.ndarray
    q: np.ndarray
    s_of_t: np.ndarray
    degenerate: bool = False

    @property
    def dt(self):
        return float(self.t_grid[1] - self.t_grid[0]) if len(self.t_grid) > 1 else 0.0


def reparametrize(path, dt_grid):
    """Sample (t_cum, q) on a uniform effective-time grid, last observation carried forward."""
    traj = path.trajectory if isinstance(path, SdePath) else path
    t_cum, q, s = traj.t_cum, traj.q, traj.s_grid
    if len(q) == 0:
        raise PathError("EMPTY_PATH", "cannot reparametrize an empty path")
    if dt_grid <= 0:
        raise ParameterError("OUT_OF_RANGE", "dt", f"must be > 0, got {dt_grid}")
    if np.any(np.diff(t_cum) < 0):
        raise PathError("NON_MONOTONE", "t_cum must be non-decreasing")
    if t_cum[-1] <= 0:
        logger.warning("No effective time elapses along the path; returning a single point")
        return Reparametrized(np.zeros(1), q[:1].copy(), s[:1].copy(), degenerate=True)

    n_points = int(math.floor(t_cum[-1] / dt_grid + 1e-9)) + 1
    t_grid = np.arange(n_points) * dt_grid
    idx = np.searchsorted(t_cum, t_grid, side="right") - 1
    return Reparametrized(t_grid, q[idx], s[idx])


def bulk_increments(reparam, lag, bulk=(0.2, 0.8)):
    """Increments Q(t + lag dt) - Q(t) over windows that never leave ``bulk``."""
    q = np.asarray(reparam.q)
    if lag < 1 or len(q) <= lag:
        return np.empty(0)
    inside = (q >= bulk[0]) & (q <= bulk[1])
    # a window is in the bulk when all lag + 1 points are
    run = np.convolve(inside.astype(int), np.ones(lag + 1, dtype=int), mode="valid")
    ok = run == lag + 1
    start = np.flatnonzero(ok)
    return q[start + lag] - q[start]


def diffusive_slope(reparam, lags, bulk=(0.2, 0.8)):
    """Least-squares slope of Var[increment] against lag * dt through the origin."""
    x, y = [], []
    for lag in lags:
        inc = bulk_increments(reparam, lag, bulk)
        if len(inc) > 1:
            x.append(lag * reparam.dt)
            y.append(np.var(inc))
    x, y = np.array(x), np.array(y)
    if len(x) == 0:
        raise PathError("EMPTY_PATH", "no bulk windows to regress on")
    return float(np.dot(x, y) / np.dot(x, x))
