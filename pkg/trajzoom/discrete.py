"""Discrete weak-measurement chain of a qubit coupled to a thermal bath.

Between two measurements the diagonal of the density matrix relaxes under the
two-level Lindblad flow ``dQ/ds = lambda (p - Q)``; every ``ds`` the energy is
weakly measured with the Kraus pair

    B+ = diag(sqrt(1 + eps), sqrt(1 - eps)) / sqrt(2)
    B- = diag(sqrt(1 - eps), sqrt(1 + eps)) / sqrt(2)

The 1/sqrt(2) makes ``B+^dag B+ + B-^dag B- = 1``; posterior states do not
depend on it.
"""

import logging
from dataclasses import dataclass

import numpy as np

from trajzoom.errors import ParameterError
from trajzoom.model import Trajectory, validate

logger = logging.getLogger(__name__)

NORMALIZATIONS = (1, 2)


@dataclass(frozen=True)
class DiscreteStepRecord:
    step_index: int
    outcome: int
    q_post: float
    dt_increment: float


def lindblad_relax(q, lam, p, ds):
    """Exact solution of dQ/ds = lam (p - Q) after a duration ``ds``."""
    return p + (q - p) * np.exp(-lam * ds)


def kraus_operators(epsilon):
    plus = np.diag([np.sqrt(1 + epsilon), np.sqrt(1 - epsilon)]) / np.sqrt(2)
    minus = np.diag([np.sqrt(1 - epsilon), np.sqrt(1 + epsilon)]) / np.sqrt(2)
    return plus, minus


def outcome_probabilities(q, epsilon):
    """Return (p+, p-) = Tr[B+- rho B+-^dag] for rho = diag(q, 1 - q)."""
    p_plus = (1 + epsilon * (2 * q - 1)) / 2
    return p_plus, 1 - p_plus


def posterior(q, epsilon, outcome):
    sign = 1 if outcome > 0 else -1
    return (1 + sign * epsilon) * q / (1 + sign * epsilon * (2 * q - 1))


def weak_measure(q, epsilon, u):
    """Draw one measurement outcome from the uniform ``u`` and update ``q``.

    The outcome is +1 when ``u < p+``; E[q_post] = q.
    """
    p_plus, _ = outcome_probabilities(q, epsilon)
    outcome = 1 if u < p_plus else -1
    return outcome, posterior(q, epsilon, outcome)


def discrete_effective_time(q_sequence, normalization=2):
    """Cumulative effective time t_n = sum_{m<=n} c (q_m - q_{m-1})^2.

    ``normalization`` is c: 2 reproduces Tr[(rho_m - rho_{m-1})^2] for diagonal
    states, 1 matches the continuous (dQ)^2 convention.
    """
    if normalization not in NORMALIZATIONS:
        raise ParameterError("OUT_OF_RANGE", "effective_time_normalization", "must be 1 or 2")
    q = np.asarray(q_sequence, dtype=float)
    t = np.zeros(len(q))
    if len(q) > 1:
        t[1:] = np.cumsum(normalization * np.diff(q) ** 2)
    return t


def boundary_mass(q, width=0.05):
    q = np.asarray(q, dtype=float)
    return float(np.mean((q <= width) | (q >= 1 - width)))


@dataclass(frozen=True)
class DiscreteRun:
    trajectory: Trajectory
    outcomes: np.ndarray
    dt_increments: np.ndarray

    def records(self):
        q_post = self.trajectory.q[1:]
        for n, (outcome, q, dt) in enumerate(zip(self.outcomes, q_post, self.dt_increments), start=1):
            yield DiscreteStepRecord(n, int(outcome), float(q), float(dt))


def run_discrete(params, seed, n_steps, normalization=2):
    """Alternate relaxation over ``ds`` and one weak measurement, ``n_steps`` times."""
    validate(params, "discrete")
    if n_steps < 1:
        raise ParameterError("OUT_OF_RANGE", "n_steps", f"must be >= 1, got {n_steps}")

    uniforms = seed.generator().random(n_steps)
    q_seq = np.empty(n_steps + 1)
    outcomes = np.empty(n_steps, dtype=np.int8)
    q = float(params.initial_q)
    q_seq[0] = q
    for n in range(n_steps):
        q = lindblad_relax(q, params.lam, params.p, params.ds)
        outcomes[n], q = weak_measure(q, params.epsilon, uniforms[n])
        q_seq[n + 1] = q

    t_cum = discrete_effective_time(q_seq, normalization)
    trajectory = Trajectory(np.arange(n_steps + 1) * params.ds, q_seq, t_cum)
    logger.debug("Discrete run %s: %d steps, final effective time %.6g", seed.describe(), n_steps, t_cum[-1])
    return DiscreteRun(trajectory, outcomes, np.diff(t_cum))
