"""The infinite-rate limit in effective time.

Q_t is Brownian motion reflected at 0 and 1,

    Q_t = Q_0 + B_t + L_t - U_t,

with L and U the pushing terms (local times) at the two boundaries, and the
physical clock is rebuilt from them as s(t) = L_t / (lambda p) + U_t / (lambda (1 - p)).
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from trajzoom.errors import ParameterError, PathError
from trajzoom.model import n_steps_for, validate

logger = logging.getLogger(__name__)

BOUNDARIES = ("both", "lower")

# the mollifier audit resolves local time only when dt / eps^2 stays below this
AUDIT_RESOLUTION = 0.01
AUDIT_EPS_RANGE = (0.02, 0.25)


@dataclass(frozen=True)
class LimitTrajectory:
    t_grid: np.ndarray
    q: np.ndarray
    big_l: np.ndarray
    big_u: np.ndarray
    b: np.ndarray
    s_of_t: np.ndarray

    @property
    def q0(self):
        return float(self.q[0])

    @property
    def dt(self):
        return float(self.t_grid[1] - self.t_grid[0]) if len(self.t_grid) > 1 else 0.0

    def to_frame(self):
        return pd.DataFrame(
            {"t": self.t_grid, "Q": self.q, "B": self.b, "L": self.big_l, "U": self.big_u, "s": self.s_of_t}
        )


def skorokhod_map(b, x0):
    """Reflect ``b`` at 0: l = max(0, -min_{j<=k} b_j - x0), x = x0 + b + l."""
    b = np.asarray(b, dtype=float)
    if x0 < 0:
        raise PathError("NEGATIVE_START", f"x0 must be >= 0, got {x0}")
    if len(b) == 0 or b[..., 0].any():
        raise PathError("NONZERO_ORIGIN", "the driving path must start at 0")
    running_min = np.minimum.accumulate(b, axis=-1)
    l = np.maximum(0.0, -running_min - x0)
    x = x0 + b + l
    # x0 + b + l can round a hair below 0 at the contact points
    np.maximum(x, 0.0, out=x)
    return x, l


def reflect_strip(b, x0):
    """Two-sided reflection in [0, 1] by the per-step clamp recursion.

    Works on one path or on a batch with time on the last axis. Returns
    (x, l, u) with x = x0 + b + l - u on every grid point.
    """
    b = np.asarray(b, dtype=float)
    if not 0 <= x0 <= 1:
        raise PathError("START_OUT_OF_STRIP", f"x0 must lie in [0, 1], got {x0}")
    if b.shape[-1] == 0 or b[..., 0].any():
        raise PathError("NONZERO_ORIGIN", "the driving path must start at 0")

    db = np.diff(b, axis=-1)
    x = np.empty_like(b)
    l = np.zeros_like(b)
    u = np.zeros_like(b)
    x[..., 0] = x0
    for k in range(db.shape[-1]):
        y = x[..., k] + db[..., k]
        dl = np.maximum(0.0, -y)
        du = np.maximum(0.0, y - 1.0)
        l[..., k + 1] = l[..., k] + dl
        u[..., k + 1] = u[..., k] + du
        x[..., k + 1] = np.minimum(np.maximum(y, 0.0), 1.0)
    return x, l, u


def physical_time(big_l, big_u, lam, p):
    """s(t) = L / (lam p) + U / (lam (1 - p))."""
    return np.asarray(big_l) / (lam * p) + np.asarray(big_u) / (lam * (1 - p))


def _brownian(seed, n_steps, dt):
    b = np.zeros(n_steps + 1)
    b[1:] = np.cumsum(math.sqrt(dt) * seed.generator().standard_normal(n_steps))
    return b


def run_limit_batch(params, seeds, horizon_t, boundaries="both"):
    """One reflected path per seed; paths do not depend on the batch they run in."""
    validate(params, "limit")
    if horizon_t <= 0:
        raise ParameterError("OUT_OF_RANGE", "horizon", f"must be > 0, got {horizon_t}")
    if boundaries not in BOUNDARIES:
        raise ParameterError("OUT_OF_RANGE", "boundaries", f"must be one of {BOUNDARIES}")

    n_steps = n_steps_for(horizon_t, params.dt)
    b = np.stack([_brownian(seed, n_steps, params.dt) for seed in seeds])
    x0 = params.initial_q
    if boundaries == "both":
        q, big_l, big_u = reflect_strip(b, x0)
    else:
        q, big_l = skorokhod_map(b, x0)
        big_u = np.zeros_like(big_l)
    s_of_t = physical_time(big_l, big_u, params.lam, params.p)
    t_grid = np.arange(n_steps + 1) * params.dt
    return [LimitTrajectory(t_grid, q[i], big_l[i], big_u[i], b[i], s_of_t[i]) for i in range(len(seeds))]


def run_limit(params, seed, horizon_t, boundaries="both"):
    return run_limit_batch(params, [seed], horizon_t, boundaries)[0]


def skorokhod_identity_residual(path):
    """max |Q - Q0 - B - L + U| over the grid."""
    residual = path.q - path.q0 - path.b - path.big_l + path.big_u
    return float(np.max(np.abs(residual)))


def local_time_mollifier(q, level, eps, dt, reflected=False):
    """Occupation estimate of the local time at ``level`` (0 or 1).

    L_hat[k] = eps^-1 * dt * #{j < k : dist(q_j, level) in [0, eps]}.
    With ``reflected=True`` the count is halved: a path reflected at the level
    fills only one side of the two-sided Dirac window.
    """
    if eps <= 0:
        raise PathError("EPS_NONPOSITIVE", f"eps must be > 0, got {eps}")
    if level not in (0, 1):
        raise ParameterError("OUT_OF_RANGE", "level", "must be 0 or 1")
    q = np.asarray(q, dtype=float)
    dist = q - level if level == 0 else level - q
    hits = (dist >= 0) & (dist <= eps)
    estimate = np.zeros(len(q))
    estimate[1:] = np.cumsum(hits[:-1]) * (dt / eps)
    return estimate / 2 if reflected else estimate


def tanaka_decomposition(b_tilde):
    """Split |B~| into the martingale B = sum sgn(B~) dB~ and the local time L = |B~| - B."""
    b_tilde = np.asarray(b_tilde, dtype=float)
    martingale = np.zeros(len(b_tilde))
    martingale[1:] = np.cumsum(np.sign(b_tilde[:-1]) * np.diff(b_tilde))
    absolute = np.abs(b_tilde)
    return absolute, martingale, absolute - martingale


@dataclass(frozen=True)
class LocalTimeAudit:
    level: int
    increments: float
    mollifier: float
    relative_gap: float
    passed: bool


def local_time_audit(path, eps, tolerance=0.1, level=0):
    """Compare the reflection-increment and mollifier estimates of the final local time."""
    primary = path.big_l[-1] if level == 0 else path.big_u[-1]
    audit = local_time_mollifier(path.q, level, eps, path.dt, reflected=True)[-1]
    gap = abs(audit - primary) / primary if primary > 0 else (0.0 if audit == 0 else math.inf)
    return LocalTimeAudit(level, float(primary), float(audit), float(gap), bool(gap <= tolerance))


def audit_eps(dt):
    """Narrowest mollifier half-width in AUDIT_EPS_RANGE that resolves a grid of step ``dt``."""
    low, high = AUDIT_EPS_RANGE
    return min(high, max(low, math.sqrt(dt / AUDIT_RESOLUTION)))


def audit_resolved(dt, eps):
    return dt <= AUDIT_RESOLUTION * eps ** 2 * (1 + 1e-9)


@dataclass(frozen=True)
class PooledAudit:
    increments: float
    mollifier: float
    relative_gap: float
    allowance: float
    checked: bool
    passed: bool


def pooled_local_time_audit(increments, mollifier, eps, dt, tolerance=0.1, n_sigma=3.0):
    """Compare summed local-time estimates over an ensemble.

    The mollified estimate of one path scatters around the pushing term with
    variance 2 eps L / 3 (L the larger estimate), so the pooled sums may differ by ``tolerance`` of the
    total plus ``n_sigma`` of that noise. The audit is checked only when the
    grid resolves the mollifier.
    """
    primary = float(np.sum(increments))
    audit = float(np.sum(mollifier))
    gap = abs(audit - primary) / primary if primary > 0 else (0.0 if audit == 0 else math.inf)
    allowance = tolerance * primary + n_sigma * math.sqrt(2 * eps * max(primary, audit) / 3)
    return PooledAudit(primary, audit, float(gap), allowance, audit_resolved(dt, eps), abs(audit - primary) <= allowance)


def inverse_time_change(s_of_t, s_query, t_grid, censor=False):
    """Right-continuous inverse t(s) = inf{t : s_of_t(t) > s}.

    Queries past the last value of ``s_of_t`` raise HORIZON_EXCEEDED, or
    return +inf when ``censor`` is set.
    """
    s_of_t = np.asarray(s_of_t, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    query = np.asarray(s_query, dtype=float)
    idx = np.searchsorted(s_of_t, query, side="right")
    exceeded = idx >= len(s_of_t)
    if np.any(exceeded) and not censor:
        raise PathError("HORIZON_EXCEEDED", f"query beyond s(t_max)={s_of_t[-1]:g}")
    t = np.where(exceeded, np.inf, t_grid[np.minimum(idx, len(t_grid) - 1)])
    return float(t) if t.ndim == 0 else t
