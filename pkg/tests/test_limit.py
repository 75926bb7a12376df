import numpy as np
import pytest

from trajzoom.errors import ParameterError, PathError
from trajzoom import stats
from trajzoom.limit import (
    AUDIT_RESOLUTION,
    audit_eps,
    audit_resolved,
    inverse_time_change,
    local_time_audit,
    local_time_mollifier,
    physical_time,
    pooled_local_time_audit,
    reflect_strip,
    run_limit,
    run_limit_batch,
    skorokhod_identity_residual,
    skorokhod_map,
    tanaka_decomposition,
)
from trajzoom.model import INFINITE, ModelParams, SeedSpec, seeds_for


def _walk(rng, n, dt):
    return np.concatenate([[0.0], np.cumsum(np.sqrt(dt) * rng.standard_normal(n))])


def test_skorokhod_map_example():
    x, l = skorokhod_map([0.0, -0.3, -0.1, -0.5], 0.2)
    np.testing.assert_allclose(l, [0.0, 0.1, 0.1, 0.3], atol=1e-15)
    np.testing.assert_allclose(x, [0.2, 0.0, 0.2, 0.0], atol=1e-15)


def test_skorokhod_map_of_a_falling_line():
    t = np.linspace(0.0, 1.0, 11)
    x, l = skorokhod_map(-t, 0.0)
    np.testing.assert_allclose(l, t, atol=1e-15)
    np.testing.assert_allclose(x, 0.0, atol=1e-15)


def test_skorokhod_map_preconditions():
    with pytest.raises(PathError) as info:
        skorokhod_map([0.0, 0.1], -0.1)
    assert info.value.code == "NEGATIVE_START"
    with pytest.raises(PathError) as info:
        skorokhod_map([0.1, 0.2], 0.0)
    assert info.value.code == "NONZERO_ORIGIN"


def test_skorokhod_lemma_on_random_paths():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        b = _walk(rng, 500, 1e-3)
        x0 = rng.uniform(0, 0.2)
        x, l = skorokhod_map(b, x0)
        assert np.all(x >= 0)
        assert l[0] == 0
        assert np.all(np.diff(l) >= 0)
        np.testing.assert_allclose(x, x0 + b + l, atol=1e-12)
        # l only grows at times when x sits at 0
        grows = np.flatnonzero(np.diff(l) > 0) + 1
        assert np.all(x[grows] < 1e-12)


def test_reflect_strip_stays_in_the_strip():
    rng = np.random.default_rng(3)
    b = np.stack([_walk(rng, 5000, 1e-3) for _ in range(4)])
    x, l, u = reflect_strip(b, 0.5)
    assert x.shape == b.shape
    assert np.all((x >= 0) & (x <= 1))
    assert np.max(np.abs(x - 0.5 - b - l + u)) <= 1e-12
    for row in range(4):
        assert np.all(x[row, np.flatnonzero(np.diff(l[row]) > 0) + 1] == 0)
        assert np.all(x[row, np.flatnonzero(np.diff(u[row]) > 0) + 1] == 1)


def test_reflect_strip_matches_one_sided_map_away_from_the_top():
    b = np.array([0.0, -0.1, -0.05, -0.2, 0.1, -0.3])
    x2, l2, u2 = reflect_strip(b, 0.1)
    x1, l1 = skorokhod_map(b, 0.1)
    np.testing.assert_allclose(x2, x1, atol=1e-15)
    np.testing.assert_allclose(l2, l1, atol=1e-15)
    assert not u2.any()


def test_reflect_strip_hand_trace():
    x, l, u = reflect_strip([0.0, 0.2, -0.1], 0.9)
    np.testing.assert_allclose(x, [0.9, 1.0, 0.7], atol=1e-15)
    np.testing.assert_allclose(np.diff(u), [0.1, 0.0], atol=1e-15)
    np.testing.assert_array_equal(l, [0.0, 0.0, 0.0])


def test_reflect_strip_rejects_start_outside():
    with pytest.raises(PathError) as info:
        reflect_strip([0.0, 0.1], 1.5)
    assert info.value.code == "START_OUT_OF_STRIP"


def test_physical_time():
    assert physical_time(0.5, 0.25, 1.0, 0.5) == pytest.approx(1.5)
    assert physical_time(1.0, 1.0, 2.0, 0.25) == pytest.approx(2.6667, abs=1e-4)
    assert physical_time(1.0, 0.0, 1.0, 0.5) == 2.0
    assert physical_time(0.0, 0.0, 1.0, 0.5) == 0.0


def test_run_limit_identity_and_reproducibility(limit_params):
    seeds = seeds_for(9, 3)
    batch = run_limit_batch(limit_params, seeds, 2.0)
    alone = run_limit(limit_params, seeds[2], 2.0)
    np.testing.assert_array_equal(batch[2].q, alone.q)
    for path in batch:
        assert skorokhod_identity_residual(path) <= 1e-12
        assert np.all(np.diff(path.s_of_t) >= 0)
        np.testing.assert_allclose(path.s_of_t, path.big_l / 0.5 + path.big_u / 0.5)
    frame = alone.to_frame()
    assert list(frame.columns) == ["t", "Q", "B", "L", "U", "s"]


def test_run_limit_one_boundary(limit_params, seed):
    path = run_limit(limit_params, seed, 1.0, boundaries="lower")
    assert not path.big_u.any()
    np.testing.assert_allclose(path.s_of_t, path.big_l / 0.5)


def test_run_limit_rejects_finite_gamma(qubit_params, seed):
    with pytest.raises(ParameterError):
        run_limit(qubit_params, seed, 1.0)
    with pytest.raises(ParameterError):
        run_limit(ModelParams(gamma=INFINITE), seed, 1.0, boundaries="upper")


def test_local_time_mollifier_counts_left_points():
    estimate = local_time_mollifier([0.0, 0.0, 0.5], 0, 0.1, 0.01)
    np.testing.assert_allclose(estimate, [0.0, 0.1, 0.2])
    np.testing.assert_allclose(local_time_mollifier([1.0, 0.95, 0.5], 1, 0.1, 0.01), [0.0, 0.1, 0.2])
    np.testing.assert_allclose(local_time_mollifier([0.0, 0.0, 0.5], 0, 0.1, 0.01, reflected=True), [0.0, 0.05, 0.1])
    with pytest.raises(PathError) as info:
        local_time_mollifier([0.0], 0, 0.0, 0.01)
    assert info.value.code == "EPS_NONPOSITIVE"


def test_tanaka_decomposition():
    rng = np.random.default_rng(17)
    dt = 1e-5
    totals = np.zeros(2)
    for _ in range(20):
        b_tilde = _walk(rng, 100_000, dt)
        absolute, martingale, local = tanaka_decomposition(b_tilde)
        np.testing.assert_allclose(absolute, martingale + local, atol=1e-12)
        assert np.all(np.diff(local) >= -1e-15)
        totals += [local[-1], local_time_mollifier(b_tilde, 0, 0.02, dt)[-1]]
    assert totals[1] == pytest.approx(totals[0], rel=0.15)


def test_local_time_estimators_agree():
    params = ModelParams(gamma=INFINITE, dt=1e-5, q0=0.0)
    primary = mollified = 0.0
    for start in (0, 10, 20):
        for path in run_limit_batch(params, seeds_for(23, 10, start), 1.0, boundaries="lower"):
            audit = local_time_audit(path, 0.02)
            primary += audit.increments
            mollified += audit.mollifier
    assert mollified == pytest.approx(primary, rel=0.1)


def test_inverse_time_change_is_right_continuous():
    s_of_t = [0.0, 0.0, 1.0, 1.0, 2.0]
    t_grid = [0.0, 1.0, 2.0, 3.0, 4.0]
    assert inverse_time_change(s_of_t, 0.0, t_grid) == 2.0
    assert inverse_time_change(s_of_t, 0.5, t_grid) == 2.0
    assert inverse_time_change(s_of_t, 1.0, t_grid) == 4.0
    with pytest.raises(PathError) as info:
        inverse_time_change(s_of_t, 2.0, t_grid)
    assert info.value.code == "HORIZON_EXCEEDED"
    np.testing.assert_array_equal(inverse_time_change(s_of_t, [0.5, 2.0], t_grid, censor=True), [2.0, np.inf])


def test_reflected_paths_settle_to_the_uniform_law():
    params = ModelParams(gamma=INFINITE, dt=1e-4)
    finals = [
        path.q[-1] for start in range(0, 10_000, 500) for path in run_limit_batch(params, seeds_for(61, 500, start), 1.0)
    ]
    assert len(finals) == 10_000
    _, p_value = stats.ks_statistic(finals, lambda q: np.clip(q, 0.0, 1.0))
    assert p_value > 0.01


def test_audit_eps_resolves_the_grid():
    assert audit_eps(1e-6) == 0.02
    assert audit_eps(1e-4) == pytest.approx(0.1)
    assert audit_eps(1e-2) == 0.25
    assert audit_resolved(1e-6, 0.02)
    assert audit_resolved(1e-4, audit_eps(1e-4))
    assert not audit_resolved(1e-4, 0.02)
    assert not audit_resolved(1e-2, audit_eps(1e-2))
    assert 1e-6 / 0.02 ** 2 <= AUDIT_RESOLUTION


def test_pooled_local_time_audit():
    agree = pooled_local_time_audit([1.0, 1.0], [1.05, 0.97], 0.02, 1e-6)
    assert agree.checked and agree.passed
    assert agree.relative_gap == pytest.approx(0.01)
    apart = pooled_local_time_audit([1.0, 1.0], [2.0, 2.0], 0.02, 1e-6)
    assert apart.checked and not apart.passed
    assert apart.relative_gap == pytest.approx(1.0)
    coarse = pooled_local_time_audit([1.0, 1.0], [2.0, 2.0], 0.02, 1e-2)
    assert not coarse.checked
    assert pooled_local_time_audit([0.0], [0.0], 0.02, 1e-6).passed
