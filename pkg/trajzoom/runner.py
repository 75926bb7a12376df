"""Seeded ensemble execution: one engine or statistic per run mode.

Trajectory indices are cut into batches of ``batch_size`` consecutive
indices; batches may run on a thread pool, but every trajectory draws from
its own stream and the per-batch results are reduced in index order, so the
output files do not depend on the number of threads.
"""

import dataclasses
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
import pandas as pd

import trajzoom
from trajzoom import stats
from trajzoom.discrete import boundary_mass, run_discrete
from trajzoom.errors import ConsistencyError, ParameterError, SampleError
from trajzoom.limit import (
    inverse_time_change,
    local_time_audit,
    pooled_local_time_audit,
    run_limit_batch,
    skorokhod_identity_residual,
)
from trajzoom.model import n_steps_for, seeds_for
from trajzoom.sde import check_step_guard, reparametrize, run_sde_batch
from trajzoom.utils import trajectory_file_name, write_csv, write_key_values

logger = logging.getLogger(__name__)

STATISTICS_FILE = "statistics.csv"
MANIFEST_FILE = "manifest.txt"

ENGINE_MODES = ("discrete", "sde", "limit")
# engine modes write full paths up to this many trajectories
PATH_LIMIT = 16
SKOROKHOD_TOLERANCE = 1e-12
AUDIT_TOLERANCE = 0.1
N_SIGMA = 3.0
# per-path cap on pooled plateau samples
PLATEAU_SAMPLES_PER_PATH = 20_000

CHECK_COLUMNS = ["statistic", "sigma", "empirical", "stderr", "target", "reference", "n_samples", "passed", "checked"]


@dataclass
class BatchResult:
    rows: List[dict] = field(default_factory=list)
    files: List[str] = field(default_factory=list)
    pooled: Dict[str, list] = field(default_factory=dict)
    clamped_steps: int = 0
    degenerate_events: int = 0
    censored_queries: int = 0

    def pool(self, name, values):
        self.pooled.setdefault(name, []).append(np.asarray(values, dtype=float))


@dataclass(frozen=True)
class RunManifest:
    config: object
    version: str
    seed_derivation: str
    threads: int
    dump_paths: bool
    wall_time_s: float
    clamped_steps: int
    degenerate_events: int
    censored_queries: int
    files: tuple
    statistics_file: str
    failed_checks: tuple = ()

    def items(self):
        out = dict(self.config.items())
        out.update(
            {
                "version": self.version,
                "seed_derivation": self.seed_derivation,
                "trajectory_indices": f"0..{self.config.n_traj - 1}",
                "threads": self.threads,
                "dump_paths": self.dump_paths,
                "wall_time_s": f"{self.wall_time_s:.3f}",
                "clamped_steps": self.clamped_steps,
                "degenerate_events": self.degenerate_events,
                "censored_queries": self.censored_queries,
                "trajectory_files": len(self.files),
                "statistics_file": os.path.basename(self.statistics_file),
                "failed_checks": ",".join(self.failed_checks) or "none",
            }
        )
        return out


def _check_row(statistic, empirical, stderr, target, n_samples, passed, checked, sigma=math.nan, reference=None):
    return {
        "statistic": statistic,
        "sigma": sigma,
        "empirical": float(empirical),
        "stderr": float(stderr),
        "target": float(target),
        "reference": float(target if reference is None else reference),
        "n_samples": int(n_samples),
        "passed": bool(passed),
        "checked": bool(checked),
    }


def _mean_stderr(values):
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise SampleError("INSUFFICIENT_SAMPLES", f"{values.size} samples, need at least 2")
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


class SimulationRunner:
    """Runs one configured mode and writes its CSVs and manifest to ``output_dir``."""

    def __init__(self, config, threads=1, dump_paths=False):
        if threads < 1:
            raise ParameterError("OUT_OF_RANGE", "threads", f"must be >= 1, got {threads}")
        self.config = config
        self.threads = threads
        self.dump_paths = dump_paths
        self.output_dir = config.output_dir

    @property
    def write_paths(self):
        if self.dump_paths:
            return True
        return self.config.mode in ENGINE_MODES and self.config.n_traj <= PATH_LIMIT

    def batches(self):
        n, size = self.config.n_traj, self.config.batch_size
        return [seeds_for(self.config.master_seed, min(size, n - start), start) for start in range(0, n, size)]

    def _map(self, job):
        batches = self.batches()
        if self.threads == 1 or len(batches) == 1:
            return [job(batch) for batch in batches]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(job, batches))

    def _write_path(self, seed, frame):
        return write_csv(frame, os.path.join(self.output_dir, trajectory_file_name(seed.trajectory_index)))

    # --- engine modes -------------------------------------------------------

    def _discrete_job(self, seeds):
        params = self.config.params
        n_steps = n_steps_for(self.config.horizon, params.ds)
        result = BatchResult()
        for seed in seeds:
            run = run_discrete(params, seed, n_steps, self.config.effective_time_normalization)
            traj = run.trajectory
            result.rows.append(
                {
                    "trajectory": seed.trajectory_index,
                    "n_steps": n_steps,
                    "q_final": traj.q[-1],
                    "t_final": traj.t_cum[-1],
                    "boundary_mass": boundary_mass(traj.q),
                    "plus_fraction": float(np.mean(run.outcomes > 0)),
                }
            )
            if self.write_paths:
                result.files.append(self._write_path(seed, traj.to_frame()))
        return result

    def _sde_job(self, seeds):
        params = self.config.params
        result = BatchResult()
        for seed, path in zip(seeds, run_sde_batch(params, seeds, self.config.horizon)):
            traj = path.trajectory
            degenerate = reparametrize(path, params.dt).degenerate
            result.clamped_steps += path.clamped_steps
            result.degenerate_events += int(degenerate)
            result.rows.append(
                {
                    "trajectory": seed.trajectory_index,
                    "q_final": traj.q[-1],
                    "t_final": traj.t_cum[-1],
                    "t_qv_final": path.qv_time[-1],
                    "estimator_discrepancy": path.estimator_discrepancy(),
                    "clamped_steps": path.clamped_steps,
                    "boundary_mass": boundary_mass(traj.q),
                    "degenerate": degenerate,
                }
            )
            if self.write_paths:
                result.files.append(self._write_path(seed, traj.to_frame()))
        return result

    def _limit_job(self, seeds):
        config = self.config
        result = BatchResult()
        for seed, path in zip(seeds, run_limit_batch(config.params, seeds, config.horizon, config.boundaries)):
            audit = local_time_audit(path, config.mollifier_eps)
            result.rows.append(
                {
                    "trajectory": seed.trajectory_index,
                    "q_final": path.q[-1],
                    "skorokhod_residual": skorokhod_identity_residual(path),
                    "L_final": path.big_l[-1],
                    "U_final": path.big_u[-1],
                    "s_final": path.s_of_t[-1],
                    "L_mollifier": audit.mollifier,
                    "local_time_gap": audit.relative_gap,
                }
            )
            if self.write_paths:
                result.files.append(self._write_path(seed, path.to_frame()))
        return result

    def process_engine(self, job):
        results = self._map(job)
        table = pd.DataFrame([row for r in results for row in r.rows])
        failed = []
        if "skorokhod_residual" in table:
            bad = table.loc[table["skorokhod_residual"] > SKOROKHOD_TOLERANCE, "trajectory"]
            if len(bad):
                failed.append(f"skorokhod_identity[{','.join(str(i) for i in bad)}]")
        if "L_mollifier" in table:
            failed.extend(self.audit_local_time(table))
        return results, table, failed

    def audit_local_time(self, table):
        config = self.config
        audit = pooled_local_time_audit(
            table["L_final"], table["L_mollifier"], config.mollifier_eps, config.params.dt, AUDIT_TOLERANCE, N_SIGMA
        )
        logger.info(
            "Local time at 0: pushing term %.6g, mollifier %.6g (gap %.3g, allowed %.3g)",
            audit.increments,
            audit.mollifier,
            audit.relative_gap,
            audit.allowance / audit.increments if audit.increments > 0 else math.inf,
        )
        if not audit.checked:
            logger.warning(
                "dt=%g does not resolve mollifier_eps=%g; local-time audit reported only",
                config.params.dt,
                config.mollifier_eps,
            )
            return []
        return [] if audit.passed else ["local_time_audit"]

    # --- statistics modes ---------------------------------------------------

    def _excursions_job(self, seeds):
        config = self.config
        result = BatchResult()
        for seed, path in zip(seeds, run_limit_batch(config.params, seeds, config.horizon, config.boundaries)):
            found = [
                e
                for e in stats.detect_excursions(path, floor=config.floor)
                if config.m_low <= e.height <= config.m_high
            ]
            result.pool("ascent", [e.ascent_time for e in found])
            result.pool("descent", [e.descent_time for e in found])
            result.pool("height", [e.height for e in found])
            if self.dump_paths:
                result.files.append(self._write_path(seed, path.to_frame()))
        return result

    def excursion_table(self, pooled):
        config = self.config
        ascent, descent, heights = pooled["ascent"], pooled["descent"], pooled["height"]
        n = heights.size
        if n < 2:
            raise SampleError("INSUFFICIENT_SAMPLES", f"{n} excursions with height in [{config.m_low}, {config.m_high}]")
        mid = (config.m_low + config.m_high) / 2
        checked = n >= config.min_samples
        rows = []
        for name, samples in (("ascent", ascent), ("descent", descent)):
            for sigma in config.sigmas:
                estimate, stderr = stats.empirical_laplace(samples, sigma)
                target = stats.conditional_excursion_laplace(heights, sigma)
                passed = abs(estimate - target) <= N_SIGMA * stderr
                reference = stats.excursion_laplace_exact(mid, sigma)
                rows.append(_check_row(f"laplace_{name}", estimate, stderr, target, n, passed, checked, sigma, reference))
            mean, stderr = _mean_stderr(samples)
            target = float(np.mean(heights ** 2) / 3)
            passed = abs(mean - target) <= 0.02 * target
            rows.append(_check_row(f"mean_{name}", mean, stderr, target, n, passed, checked, reference=stats.mean_excursion_time(mid)))
        corr = float(np.corrcoef(ascent, descent)[0, 1])
        stderr = 1 / math.sqrt(n)
        rows.append(_check_row("ascent_descent_correlation", corr, stderr, 0.0, n, abs(corr) <= N_SIGMA * stderr, checked))
        return pd.DataFrame(rows, columns=CHECK_COLUMNS)

    def _levy_job(self, seeds):
        config = self.config
        result = BatchResult()
        queries = [config.s_query, config.s1, config.s2]
        params = config.params
        # t(s) is a stable subordinator only from Q0 = 0
        if params.q0 is None:
            params = dataclasses.replace(params, q0=0.0)
        for seed, path in zip(seeds, run_limit_batch(params, seeds, config.horizon, "lower")):
            t_query, t1, t2 = inverse_time_change(path.s_of_t, queries, path.t_grid, censor=True)
            result.pool("t_query", [t_query])
            result.pool("t1", [t1])
            result.pool("t2", [t2])
            result.censored_queries += int(np.isinf([t_query, t1, t2]).sum())
            if self.dump_paths:
                result.files.append(self._write_path(seed, path.to_frame()))
        return result

    def levy_table(self, pooled):
        config, params = self.config, self.config.params
        t_query, t1, t2 = pooled["t_query"], pooled["t1"], pooled["t2"]
        n = t_query.size
        checked = n >= config.min_samples
        rows = []
        for sigma in config.sigmas:
            estimate, stderr = stats.empirical_laplace(t_query, sigma)
            target = stats.levy_laplace(config.s_query, sigma, params.lam, params.p)
            passed = abs(estimate - target) <= max(N_SIGMA * stderr, 0.01 * target)
            rows.append(_check_row("laplace_t_of_s", estimate, stderr, target, n, passed, checked, sigma))

        distance, p_value = stats.ks_statistic(t_query, lambda t: stats.levy_cdf(config.s_query, t, params.lam, params.p))
        rows.append(_check_row("ks_t_of_s", distance, p_value, 0.02, n, distance < 0.02, checked))

        sigma1, sigma2 = config.sigmas[0], config.sigmas[-1]
        result = stats.laplace_factorization_check(
            t1, t2, config.s1, config.s2, sigma1, sigma2, params.lam, params.p, min_samples=2, n_sigma=N_SIGMA
        )
        rows.append(
            _check_row("laplace_factorization", result.estimate, result.stderr, result.target, n, result.details["joint_ok"], checked)
        )
        rows.append(
            _check_row(
                "increment_covariance", result.covariance, result.covariance_stderr, 0.0, n, result.details["covariance_ok"], checked
            )
        )
        return pd.DataFrame(rows, columns=CHECK_COLUMNS)

    def _spikes_job(self, seeds):
        config, params = self.config, self.config.params
        result = BatchResult()
        for seed, path in zip(seeds, run_sde_batch(params, seeds, config.horizon)):
            census = stats.spike_census(path.trajectory, config.spike_m, "lower")
            samples = stats.plateau_samples(path.trajectory, "lower", config.plateau_cutoff)
            stride = max(1, math.ceil(samples.size / PLATEAU_SAMPLES_PER_PATH))
            result.clamped_steps += path.clamped_steps
            result.pool("spikes", [census.count])
            result.pool("plateau_time", [census.plateau_time])
            result.pool("plateau", samples[::stride])
            if self.dump_paths:
                result.files.append(self._write_path(seed, path.trajectory.to_frame()))
        return result

    def spike_table(self, pooled):
        config, params = self.config, self.config.params
        n_traj = pooled["spikes"].size
        total = float(pooled["spikes"].sum())
        checked = n_traj >= config.min_samples
        expected = sum(
            stats.limit_spike_count_mean(config.spike_m, params.lam, params.p, window) for window in pooled["plateau_time"]
        )
        closed_form = n_traj * stats.spike_count_mean(config.spike_m, params.lam, params.p, config.horizon)
        rows = [
            _check_row(
                "spike_count",
                total,
                math.sqrt(expected),
                expected,
                n_traj,
                abs(total - expected) <= N_SIGMA * math.sqrt(expected),
                checked,
                reference=closed_form,
            ),
            _check_row(
                "spike_count_closed_form",
                total,
                math.sqrt(closed_form),
                closed_form,
                n_traj,
                abs(total - closed_form) <= N_SIGMA * math.sqrt(closed_form),
                False,
            ),
        ]

        samples = pooled["plateau"]
        if samples.size == 0:
            raise SampleError("EMPTY_SAMPLES", "no plateau samples below plateau_cutoff")
        cutoff = config.plateau_cutoff
        for name, law, check in (
            ("boundary_ks_stationary", stats.stationary_boundary_cdf, checked),
            ("boundary_ks_closed_form", stats.boundary_law_cdf, False),
        ):
            norm = law(cutoff, params.gamma, params.lam, params.p)
            distance, p_value = stats.ks_statistic(samples, lambda q: law(q, params.gamma, params.lam, params.p) / norm)
            rows.append(_check_row(name, distance, p_value, 0.05, samples.size, distance < 0.05, check))
        return pd.DataFrame(rows, columns=CHECK_COLUMNS)

    def _entropy_job(self, seeds):
        config, params = self.config, self.config.params
        result = BatchResult()
        if params.is_limit:
            for seed, path in zip(seeds, run_limit_batch(params, seeds, config.horizon, config.boundaries)):
                series = stats.linear_entropy_series(path.q, "effective-time", path.big_l, path.big_u, path.dt, path.b)
                result.pool("bulk_dS", stats.bulk_entropy_steps(series, path.q))
                result.pool("residual", series.decomposition["residual"].to_numpy())
                result.pool("residual_bulk", stats.bulk_entropy_steps(series, path.q, column="residual"))
                if self.dump_paths:
                    result.files.append(self._write_path(seed, path.to_frame()))
        else:
            for seed, path in zip(seeds, run_sde_batch(params, seeds, config.horizon)):
                series = stats.linear_entropy_series(
                    path.trajectory.q, "real-time", params=params, increments_w=path.increments_w
                )
                frame = series.decomposition
                result.clamped_steps += path.clamped_steps
                for column in ("bath", "information", "residual"):
                    result.pool(column, frame[column].to_numpy())
                if self.dump_paths:
                    result.files.append(self._write_path(seed, path.trajectory.to_frame()))
        return result

    def entropy_table(self, pooled):
        config, params = self.config, self.config.params
        rows = []
        if params.is_limit:
            drift = stats.BulkDrift.from_steps(pooled["bulk_dS"], params.dt)
            rows.append(
                _check_row(
                    "bulk_entropy_drift",
                    drift.mean_ds,
                    drift.stderr,
                    drift.expected,
                    drift.n_steps,
                    drift.within(0.05),
                    drift.n_steps >= config.min_samples,
                )
            )
            residual = pooled["residual"]
            mean, stderr = _mean_stderr(residual)
            # reflected grid steps shrink the squared increment, biasing the full sum by O(dt^1.5) per push
            rows.append(_check_row("ito_residual", mean, stderr, 0.0, residual.size, abs(mean) <= N_SIGMA * stderr, False))
            residual = pooled["residual_bulk"]
            mean, stderr = _mean_stderr(residual)
            rows.append(
                _check_row(
                    "ito_residual_bulk",
                    mean,
                    stderr,
                    0.0,
                    residual.size,
                    abs(mean) <= N_SIGMA * stderr,
                    residual.size >= config.min_samples,
                )
            )
        else:
            for column in ("bath", "information", "residual"):
                mean, stderr = _mean_stderr(pooled[column])
                rows.append(_check_row(f"{column}_per_step", mean, stderr, 0.0, pooled[column].size, True, False))
        return pd.DataFrame(rows, columns=CHECK_COLUMNS)

    def _convergence_job(self, params, seeds):
        config = self.config
        result = BatchResult()
        for seed, path in zip(seeds, run_sde_batch(params, seeds, config.horizon)):
            reparam = reparametrize(path, params.dt)
            result.clamped_steps += path.clamped_steps
            result.degenerate_events += int(reparam.degenerate)
            if not reparam.degenerate:
                result.pool("increments", stats.standardized_increments(reparam, config.lag))
        return result

    def process_convergence(self):
        config = self.config
        all_results, rows = [], []
        for gamma in sorted(config.gammas):
            params = dataclasses.replace(config.params, gamma=gamma)
            check_step_guard(params)
            results = self._map(lambda seeds, params=params: self._convergence_job(params, seeds))
            all_results.extend(results)
            increments = _concatenate(results).get("increments", np.empty(0))
            if increments.size == 0:
                raise SampleError("EMPTY_SAMPLES", f"no bulk increments at gamma={gamma:g}")
            distance, p_value = stats.normal_ks(increments)
            logger.info("gamma=%g: KS distance of bulk increments %.4g over %d samples", gamma, distance, increments.size)
            rows.append({"gamma": gamma, "ks_distance": distance, "p_value": p_value, "n_increments": increments.size})

        # every row must improve on the smaller gamma before it; the largest must also be close
        table = pd.DataFrame(rows)
        table["monotone"] = table["ks_distance"].diff().fillna(-1.0) < 0
        if not table["monotone"].all():
            logger.warning("KS distance does not decrease monotonically in gamma: %s", table["ks_distance"].tolist())
        enough = table["n_increments"] >= config.min_samples
        table["passed"] = table["monotone"]
        table["checked"] = enough & enough.shift(fill_value=True)
        last = table.index[-1]
        table.loc[last, "passed"] = bool(table.loc[last, "monotone"] and table.loc[last, "ks_distance"] < 0.05)
        return all_results, table

    def process_statistics(self, job, build):
        results = self._map(job)
        return results, build(_concatenate(results))

    # --- driver -------------------------------------------------------------

    def _stage(self):
        mode = self.config.mode
        if mode == "discrete":
            return self.process_engine(self._discrete_job)
        if mode == "sde":
            return self.process_engine(self._sde_job)
        if mode == "limit":
            return self.process_engine(self._limit_job)
        if mode == "stats-convergence":
            results, table = self.process_convergence()
        else:
            job, build = {
                "stats-excursions": (self._excursions_job, self.excursion_table),
                "stats-levy": (self._levy_job, self.levy_table),
                "stats-spikes": (self._spikes_job, self.spike_table),
                "stats-entropy": (self._entropy_job, self.entropy_table),
            }[mode]
            results, table = self.process_statistics(job, build)
        failed = table.loc[table["checked"] & ~table["passed"]]
        names = failed["statistic"] if "statistic" in failed else failed["gamma"].map(lambda g: f"ks_gamma_{g:g}")
        return results, table, list(names)

    def run(self):
        config = self.config
        started = time.perf_counter()
        os.makedirs(self.output_dir, exist_ok=True)
        logger.info(
            "Running %s: %d trajectories, horizon %g, %d thread(s)", config.mode, config.n_traj, config.horizon, self.threads
        )
        results, table, failed = self._stage()
        statistics_file = write_csv(table, os.path.join(self.output_dir, STATISTICS_FILE))
        logger.info("Statistics saved to: %s", statistics_file)

        manifest = RunManifest(
            config=config,
            version=trajzoom.__version__,
            seed_derivation=f"SeedSequence(entropy={config.master_seed}, spawn_key=(index,))",
            threads=self.threads,
            dump_paths=self.dump_paths,
            wall_time_s=time.perf_counter() - started,
            clamped_steps=sum(r.clamped_steps for r in results),
            degenerate_events=sum(r.degenerate_events for r in results),
            censored_queries=sum(r.censored_queries for r in results),
            files=tuple(f for r in results for f in r.files),
            statistics_file=statistics_file,
            failed_checks=tuple(failed),
        )
        manifest_file = write_key_values(manifest.items(), os.path.join(self.output_dir, MANIFEST_FILE))
        logger.info("Manifest saved to: %s", manifest_file)
        if manifest.censored_queries:
            logger.warning("%d time-change queries beyond the horizon were censored", manifest.censored_queries)
        if failed:
            raise ConsistencyError("CHECK_FAILED", f"failed checks: {', '.join(failed)} (see {statistics_file})")
        return manifest


def _concatenate(results):
    names = {name for r in results for name in r.pooled}
    return {name: np.concatenate([a for r in results for a in r.pooled.get(name, [])]) for name in sorted(names)}


def run(config, threads=1, dump_paths=False):
    return SimulationRunner(config, threads=threads, dump_paths=dump_paths).run()
