"""Reference laws of the strong-monitoring limit and the estimators that check them.

Closed forms:

* time to climb (or descend) an excursion of height m: Laplace transform
  m sqrt(2 sigma) / sinh(m sqrt(2 sigma)), mean m^2 / 3;
* one-boundary inverse time change t(s): stable-1/2 law of scale (lambda p s)^2,
  E[exp(-sigma t(s))] = exp(-s lambda p sqrt(2 sigma));
* near-boundary law of Q at finite gamma and the spike intensity built on it;
* Ito decomposition of the linear entropy S = 2 Q (1 - Q).
"""

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np
import pandas as pd
from scipy import integrate, special
from scipy import stats as sps

from trajzoom.errors import ParameterError, SampleError
from trajzoom.sde import bulk_increments

logger = logging.getLogger(__name__)

DEFAULT_FLOOR = 0.02
THETA_TERMS = 64
# below this fraction of m^2 the excursion-time density is < 1e-17
THETA_CUTOFF = 0.01


def _scalar_or_array(value):
    value = np.asarray(value, dtype=float)
    return float(value) if value.ndim == 0 else value


# --- laws -------------------------------------------------------------------


@dataclass(frozen=True)
class LawSpec:
    """An analytic reference law: density, optional CDF and Laplace transform."""

    name: str
    parameters: Mapping[str, float]
    density: Callable
    cdf: Optional[Callable] = None
    laplace: Optional[Callable] = None
    pivot: float = 1.0

    def normalization(self):
        """Integral of the density over (0, inf), computed in log-time by quadrature."""

        def integrand(y):
            x = math.exp(y)
            return float(self.density(x)) * x

        y0 = math.log(self.pivot)
        left, _ = integrate.quad(integrand, -np.inf, y0, epsabs=1e-11, epsrel=1e-10, limit=200)
        right, _ = integrate.quad(integrand, y0, np.inf, epsabs=1e-11, epsrel=1e-10, limit=200)
        return left + right


def excursion_laplace_exact(m, sigma):
    """m sqrt(2 sigma) / sinh(m sqrt(2 sigma)); equal to 1 at sigma = 0."""
    if np.any(np.asarray(m) <= 0) or np.any(np.asarray(sigma) < 0):
        raise ParameterError("OUT_OF_RANGE", "m/sigma", "need m > 0 and sigma >= 0")
    x = np.asarray(m, dtype=float) * np.sqrt(2 * np.asarray(sigma, dtype=float))
    with np.errstate(invalid="ignore", over="ignore"):
        value = np.where(x == 0, 1.0, x / np.sinh(x))
    return _scalar_or_array(value)


def mean_excursion_time(m):
    return _scalar_or_array(np.asarray(m, dtype=float) ** 2 / 3)


def excursion_time_density(m, t):
    """Density of the climb time to height m: sum (-1)^(k+1) (k pi / m)^2 exp(-k^2 pi^2 t / (2 m^2))."""
    t = np.asarray(t, dtype=float)
    k = np.arange(1, THETA_TERMS + 1).reshape((-1,) + (1,) * t.ndim)
    rates = (k * np.pi / m) ** 2
    terms = np.where(k % 2 == 1, 1.0, -1.0) * rates * np.exp(-rates * t / 2)
    value = np.where(t < THETA_CUTOFF * m * m, 0.0, terms.sum(axis=0))
    return _scalar_or_array(np.maximum(value, 0.0))


def excursion_time_cdf(m, t):
    t = np.asarray(t, dtype=float)
    k = np.arange(1, THETA_TERMS + 1).reshape((-1,) + (1,) * t.ndim)
    terms = np.where(k % 2 == 1, -2.0, 2.0) * np.exp(-((k * np.pi / m) ** 2) * t / 2)
    value = np.where(t < THETA_CUTOFF * m * m, 0.0, 1.0 + terms.sum(axis=0))
    return _scalar_or_array(np.clip(value, 0.0, 1.0))


def excursion_time_law(m):
    return LawSpec(
        name="excursion_time",
        parameters={"m": m},
        density=lambda t: excursion_time_density(m, t),
        cdf=lambda t: excursion_time_cdf(m, t),
        laplace=lambda sigma: excursion_laplace_exact(m, sigma),
        pivot=m * m / 3,
    )


def levy_scale(s, lam, p):
    return lam * p * s


def levy_density(s, t, lam, p):
    """(lam p s) / sqrt(2 pi) * t^(-3/2) * exp(-(lam p s)^2 / (2 t))."""
    a = levy_scale(s, lam, p)
    t = np.asarray(t, dtype=float)
    return _scalar_or_array(a / math.sqrt(2 * math.pi) * t ** -1.5 * np.exp(-(a * a) / (2 * t)))


def levy_cdf(s, t, lam, p):
    a = levy_scale(s, lam, p)
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        return _scalar_or_array(special.erfc(a / np.sqrt(2 * t)))


def levy_mode(s, lam, p):
    return levy_scale(s, lam, p) ** 2 / 3


def levy_laplace(s, sigma, lam, p):
    return _scalar_or_array(np.exp(-s * lam * p * np.sqrt(2 * np.asarray(sigma, dtype=float))))


def levy_time_law(s, lam, p):
    frozen = sps.levy(scale=levy_scale(s, lam, p) ** 2)
    return LawSpec(
        name="levy_time",
        parameters={"s": s, "lambda": lam, "p": p},
        density=frozen.pdf,
        cdf=frozen.cdf,
        laplace=lambda sigma: levy_laplace(s, sigma, lam, p),
        pivot=levy_mode(s, lam, p),
    )


def sample_levy_time(s, lam, p, size, rng):
    """Exact draws of the one-boundary t(s): (lam p s / Z)^2 with Z standard normal."""
    return sps.levy.rvs(scale=levy_scale(s, lam, p) ** 2, size=size, random_state=rng)


def boundary_law_cdf(q, gamma, lam, p):
    """P[Q < q] = exp(-2 / (gamma lam p q)), the closed-form near-boundary law."""
    q = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore"):
        return _scalar_or_array(np.exp(-2.0 / (gamma * lam * p * q)))


def stationary_boundary_cdf(q, gamma, lam, p):
    """P[Q < q] = exp(-2 lam p / (gamma q)), the stationary law of dQ = lam p ds + sqrt(gamma) Q dW."""
    q = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore"):
        return _scalar_or_array(np.exp(-2.0 * lam * p / (gamma * q)))


def boundary_law(gamma, lam, p, form="stationary"):
    """The near-boundary law as a Frechet distribution of shape 1 on (0, inf)."""
    if form == "closed-form":
        scale = 2.0 / (gamma * lam * p)
    elif form == "stationary":
        scale = 2.0 * lam * p / gamma
    else:
        raise ParameterError("OUT_OF_RANGE", "form", "must be 'closed-form' or 'stationary'")
    frozen = sps.invweibull(1.0, scale=scale)
    return LawSpec(
        name=f"boundary_{form}",
        parameters={"gamma": gamma, "lambda": lam, "p": p},
        density=frozen.pdf,
        cdf=frozen.cdf,
        pivot=scale,
    )


def spike_count_mean(m, lam, p, window_s, boundary="lower"):
    """Closed-form intensity: 2 window / (lam p m) spikes above m in a real-time window.

    ``boundary="upper"`` is the mirror image (p -> 1 - p, m -> 1 - m).
    """
    if boundary == "lower":
        return 2.0 * window_s / (lam * p * m)
    if boundary == "upper":
        return 2.0 * window_s / (lam * (1 - p) * (1 - m))
    raise ParameterError("OUT_OF_RANGE", "boundary", "must be 'lower' or 'upper'")


def limit_spike_count_mean(m, lam, p, window_s, boundary="lower"):
    """Exact gamma -> inf mean of spikes whose height exceeds m and that return to their boundary.

    Excursions with height above h arrive at rate 1/h per unit local time and
    the local time at 0 grows as lam p s; spikes are those above m minus those
    reaching the opposite boundary.
    """
    if boundary == "lower":
        return lam * p * window_s * (1.0 / m - 1.0)
    if boundary == "upper":
        return lam * (1 - p) * window_s * (1.0 / (1 - m) - 1.0)
    raise ParameterError("OUT_OF_RANGE", "boundary", "must be 'lower' or 'upper'")


# --- excursions -------------------------------------------------------------


class ExcursionKind(enum.Enum):
    SPIKE = "spike"
    JUMP = "jump"


@dataclass(frozen=True)
class Excursion:
    t_start: float
    t_apex: float
    t_end: float
    height: float
    origin_boundary: int
    kind: ExcursionKind

    @property
    def ascent_time(self):
        return self.t_apex - self.t_start

    @property
    def descent_time(self):
        return self.t_end - self.t_apex


def _contact_segments(q, tol):
    """Segments between consecutive boundary contacts.

    Returns (start, end, origin, arrival) index/label arrays; labels are 0 for
    the lower boundary and 1 for the upper one.
    """
    label = np.full(len(q), -1, dtype=np.int8)
    label[q <= tol] = 0
    label[q >= 1 - tol] = 1
    contacts = np.flatnonzero(label >= 0)
    if len(contacts) < 2:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, empty, empty, label
    gaps = np.diff(contacts) > 1
    start = contacts[:-1][gaps]
    end = contacts[1:][gaps]
    return start, end, label[start].astype(np.int64), label[end].astype(np.int64), label


def _segment_extrema(q, start, end):
    if len(start) == 0:
        return np.empty(0), np.empty(0)
    bounds = np.empty(2 * len(start), dtype=np.int64)
    bounds[0::2] = start + 1
    bounds[1::2] = end
    seg_max = np.maximum.reduceat(q, bounds)[0::2]
    seg_min = np.minimum.reduceat(q, bounds)[0::2]
    return seg_max, seg_min


def detect_excursions(path, floor=DEFAULT_FLOOR, jump_tol=None, contact_tol=0.0):
    """Boundary-to-boundary excursions of an effective-time path higher than ``floor``.

    An excursion runs from the last grid contact with a boundary to the next
    contact with either boundary. It is a JUMP when it ends on the opposite
    boundary or comes within ``jump_tol`` (default 2 sqrt(dt)) of it, a SPIKE
    otherwise. Pieces before the first and after the last contact are not
    complete excursions and are skipped.
    """
    if not 0 < floor < 0.5:
        raise ParameterError("OUT_OF_RANGE", "floor", f"must lie in (0, 0.5), got {floor}")
    q = np.asarray(path.q, dtype=float)
    t = np.asarray(path.t_grid, dtype=float)
    if jump_tol is None:
        jump_tol = 2 * math.sqrt(t[1] - t[0]) if len(t) > 1 else 0.0

    start, end, origin, arrival, _ = _contact_segments(q, contact_tol)
    seg_max, seg_min = _segment_extrema(q, start, end)
    # from the lower boundary the height is the maximum, from the upper one 1 - minimum
    heights = np.where(origin == 0, np.maximum(seg_max, q[end]), 1 - np.minimum(seg_min, q[end]))

    excursions = []
    for i in np.flatnonzero(heights > floor):
        lo, hi = start[i], end[i]
        window = q[lo + 1 : hi + 1]
        apex = lo + 1 + int(np.argmax(window) if origin[i] == 0 else np.argmin(window))
        jump = arrival[i] != origin[i] or heights[i] >= 1 - jump_tol
        excursions.append(
            Excursion(
                t_start=float(t[lo]),
                t_apex=float(t[apex]),
                t_end=float(t[hi]),
                height=float(min(heights[i], 1.0)),
                origin_boundary=int(origin[i]),
                kind=ExcursionKind.JUMP if jump else ExcursionKind.SPIKE,
            )
        )
    return excursions


def excursion_frame(excursions):
    return pd.DataFrame(
        {
            "t_start": [e.t_start for e in excursions],
            "t_apex": [e.t_apex for e in excursions],
            "t_end": [e.t_end for e in excursions],
            "height": [e.height for e in excursions],
            "ascent_time": [e.ascent_time for e in excursions],
            "descent_time": [e.descent_time for e in excursions],
            "origin_boundary": [e.origin_boundary for e in excursions],
            "kind": [e.kind.value for e in excursions],
        }
    )


def conditional_excursion_laplace(heights, sigma):
    """Exact transform averaged over the observed heights: E[E[exp(-sigma T) | m]]."""
    heights = np.asarray(heights, dtype=float)
    if heights.size == 0:
        raise SampleError("EMPTY_SAMPLES", "no excursion heights")
    return float(np.mean(excursion_laplace_exact(heights, sigma)))


# --- real-time spike census -------------------------------------------------


@dataclass(frozen=True)
class SpikeCensus:
    count: int
    plateau_time: float
    boundary: str


def _regime(q, contact):
    """Boundary last visited (0, 1, or -1 before any contact), forward-filled."""
    label = np.full(len(q), -1, dtype=np.int8)
    label[q <= contact] = 0
    label[q >= 1 - contact] = 1
    idx = np.where(label >= 0, np.arange(len(q)), 0)
    np.maximum.accumulate(idx, out=idx)
    regime = label[idx]
    first = np.flatnonzero(label >= 0)
    if len(first):
        regime[: first[0]] = -1
    else:
        regime[:] = -1
    return regime


def spike_census(trajectory, m, boundary="lower", contact=0.02):
    """Count real-time spikes above level ``m`` that return to ``boundary``.

    A spike leaves the ``contact`` band of the boundary, passes ``m`` and comes
    back without touching the band of the opposite boundary. The plateau time is
    the real time during which that boundary was the last one visited.
    """
    q = np.asarray(trajectory.q, dtype=float)
    level = 0 if boundary == "lower" else 1
    start, end, origin, arrival, _ = _contact_segments(q, contact)
    seg_max, seg_min = _segment_extrema(q, start, end)
    same = (origin == level) & (arrival == level)
    high = seg_max > m if level == 0 else seg_min < m
    regime = _regime(q, contact)
    plateau_steps = int(np.count_nonzero(regime[:-1] == level))
    return SpikeCensus(int(np.count_nonzero(same & high)), plateau_steps * trajectory.ds, boundary)


def plateau_samples(trajectory, boundary="lower", cutoff=0.05, contact=0.02):
    """Distances to ``boundary`` below ``cutoff`` sampled while on that boundary's plateau."""
    q = np.asarray(trajectory.q, dtype=float)
    level = 0 if boundary == "lower" else 1
    dist = q if level == 0 else 1 - q
    regime = _regime(q, contact)
    return dist[(regime == level) & (dist < cutoff)]


# --- linear entropy ---------------------------------------------------------


@dataclass(frozen=True)
class EntropySeries:
    s_l: np.ndarray
    decomposition: Optional[pd.DataFrame] = None


def linear_entropy(q):
    q = np.asarray(q, dtype=float)
    return _scalar_or_array(2 * q * (1 - q))


def linear_entropy_series(
    q,
    mode="effective-time",
    big_l=None,
    big_u=None,
    dt=None,
    b=None,
    params=None,
    increments_w=None,
):
    """S = 2 Q (1 - Q) along a path and its Ito decomposition.

    Effective time: dS = 2 (1 - 2Q) dB - 2 dt + 2 (dL + dU); the martingale
    column is what remains after the drift and boundary terms, and when ``b``
    is given the Ito martingale and the full residual are added.

    Real time (finite gamma, needs ``params`` and ``increments_w``):
    dS = 2 lam (1 - 2Q)(p - Q) ds + 2 sqrt(gamma) Q (1 - Q)(1 - 2Q) dW - 2 gamma Q^2 (1 - Q)^2 ds.
    """
    q = np.asarray(q, dtype=float)
    s_l = 2 * q * (1 - q)
    d_s = np.diff(s_l)
    qk = q[:-1]

    if mode == "effective-time":
        if big_l is None or big_u is None:
            raise SampleError("MISSING_LOCAL_TIMES", "effective-time mode needs L and U")
        if dt is None:
            raise ParameterError("OUT_OF_RANGE", "dt", "effective-time mode needs the grid step")
        boundary = 2 * (np.diff(big_l) + np.diff(big_u))
        drift = np.full(len(d_s), -2.0 * dt)
        frame = pd.DataFrame({"dS": d_s, "drift": drift, "boundary": boundary, "martingale": d_s - drift - boundary})
        if b is not None:
            frame["ito_martingale"] = 2 * (1 - 2 * qk) * np.diff(b)
            frame["residual"] = d_s - frame["ito_martingale"] - drift - boundary
        return EntropySeries(s_l, frame)

    if mode == "real-time":
        if params is None or increments_w is None:
            raise SampleError("MISSING_INCREMENTS", "real-time mode needs params and the Brownian increments")
        ds = params.ds
        bath = 2 * params.lam * (1 - 2 * qk) * (params.p - qk) * ds
        noise = 2 * math.sqrt(params.gamma) * qk * (1 - qk) * (1 - 2 * qk) * np.asarray(increments_w)
        information = -2 * params.gamma * qk ** 2 * (1 - qk) ** 2 * ds
        frame = pd.DataFrame({"dS": d_s, "bath": bath, "noise": noise, "information": information})
        frame["residual"] = d_s - bath - noise - information
        return EntropySeries(s_l, frame)

    raise ParameterError("OUT_OF_RANGE", "mode", "must be 'effective-time' or 'real-time'")


@dataclass(frozen=True)
class BulkDrift:
    mean_ds: float
    stderr: float
    expected: float
    n_steps: int

    @classmethod
    def from_steps(cls, values, dt):
        """Drift of bulk entropy steps, pooled from any number of paths, against -2 dt."""
        values = np.asarray(values, dtype=float)
        if values.size < 2:
            raise SampleError("EMPTY_SAMPLES", "no bulk steps")
        return cls(float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size)), -2.0 * dt, int(values.size))

    def within(self, rel=0.05):
        return abs(self.mean_ds - self.expected) <= rel * abs(self.expected)


def bulk_entropy_steps(series, q, bulk=(0.2, 0.8), column="dS"):
    """Values of ``column`` on the steps that start in ``bulk`` and do not touch a boundary."""
    frame = series.decomposition
    qk = np.asarray(q, dtype=float)[:-1]
    mask = (qk >= bulk[0]) & (qk <= bulk[1]) & (frame["boundary"].to_numpy() == 0)
    return frame[column].to_numpy()[mask]


def bulk_entropy_drift(series, q, dt, bulk=(0.2, 0.8)):
    return BulkDrift.from_steps(bulk_entropy_steps(series, q, bulk), dt)


# --- goodness of fit --------------------------------------------------------


def ks_statistic(samples, cdf):
    """One-sample Kolmogorov-Smirnov distance and its asymptotic p-value.

    Samples equal to +inf are right-censored: they count in n but the distance
    is taken over the finite sample points only.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise SampleError("EMPTY_SAMPLES", "no samples")
    i = np.arange(1, n + 1)[np.isfinite(x)]
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise SampleError("EMPTY_SAMPLES", "every sample is censored")
    f = np.asarray(cdf(x), dtype=float)
    d = float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))
    return d, float(sps.kstwobign.sf(math.sqrt(n) * d))


def empirical_laplace(samples, sigma):
    """Mean and standard error of exp(-sigma x) over the samples (x = inf counts as 0)."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise SampleError("EMPTY_SAMPLES", "no samples")
    if np.any(x < 0):
        raise SampleError("NEGATIVE_SAMPLES", "Laplace estimates need non-negative samples")
    values = np.ones_like(x) if sigma == 0 else np.exp(-sigma * x)
    stderr = float(values.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return float(values.mean()), stderr


def standardized_increments(reparam, lag, bulk=(0.2, 0.8)):
    """Bulk increments over ``lag`` grid steps divided by sqrt(lag dt)."""
    return bulk_increments(reparam, lag, bulk) / math.sqrt(lag * reparam.dt)


def normal_ks(increments):
    """KS distance and p-value of standardized increments against N(0, 1)."""
    increments = np.asarray(increments, dtype=float)
    if increments.size == 0:
        raise SampleError("EMPTY_SAMPLES", "no bulk increments")
    return ks_statistic(increments, sps.norm.cdf)


def bulk_increment_ks(reparam, lag, bulk=(0.2, 0.8)):
    """KS distance of bulk increments over ``lag`` grid steps, scaled by sqrt(lag dt), against N(0, 1)."""
    return normal_ks(standardized_increments(reparam, lag, bulk))


@dataclass(frozen=True)
class FactorizationResult:
    passed: bool
    estimate: float
    stderr: float
    target: float
    covariance: float
    covariance_stderr: float
    n_samples: int = 0
    details: dict = field(default_factory=dict)


def laplace_factorization_check(t1, t2, s1, s2, sigma1, sigma2, lam, p, min_samples=10_000, n_sigma=3.0):
    """Check E[exp(-sigma1 t(s1) - sigma2 (t(s2) - t(s1)))] against the product of stable-1/2 transforms.

    Also checks that exp(-sigma1 t(s1)) and exp(-sigma2 (t(s2) - t(s1))) are
    uncorrelated, as independent increments require.
    """
    if not 0 < s1 < s2:
        raise ParameterError("OUT_OF_RANGE", "s1/s2", "need 0 < s1 < s2")
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    n = t1.size
    if n < min_samples:
        raise SampleError("INSUFFICIENT_SAMPLES", f"{n} samples, need at least {min_samples}")
    with np.errstate(invalid="ignore"):
        increment = np.where(np.isinf(t1), np.inf, t2 - t1)
    first = np.ones(n) if sigma1 == 0 else np.exp(-sigma1 * t1)
    second = np.ones(n) if sigma2 == 0 else np.exp(-sigma2 * increment)

    joint = first * second
    estimate = float(joint.mean())
    stderr = float(joint.std(ddof=1) / math.sqrt(n))
    target = float(levy_laplace(s1, sigma1, lam, p) * levy_laplace(s2 - s1, sigma2, lam, p))

    centred = (first - first.mean()) * (second - second.mean())
    covariance = float(centred.mean())
    covariance_stderr = float(centred.std(ddof=1) / math.sqrt(n))

    joint_ok = abs(estimate - target) <= n_sigma * stderr + 1e-12
    cov_ok = abs(covariance) <= n_sigma * covariance_stderr + 1e-12
    return FactorizationResult(
        passed=bool(joint_ok and cov_ok),
        estimate=estimate,
        stderr=stderr,
        target=target,
        covariance=covariance,
        covariance_stderr=covariance_stderr,
        n_samples=n,
        details={"joint_ok": bool(joint_ok), "covariance_ok": bool(cov_ok)},
    )
