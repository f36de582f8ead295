import numpy as np
import pytest

from smoothed_ftpl.core import (
    ContextSample,
    DimensionMismatchError,
    ParamPoint,
    ParamSpace,
    canonicalize,
    clamp_to_space,
    eval_rho,
    l1_distance,
)
from smoothed_ftpl.pwa_env import (
    affine_tournament_environment,
    metric_for,
    threshold_environment,
)
from smoothed_ftpl.smoothing import uniform_box_strategy


def space(lo, hi, **kw):
    return ParamSpace(np.asarray(lo, float), np.asarray(hi, float), **kw)


def point(coords, s):
    return ParamPoint(np.asarray(coords, float), s)


class TestParamSpace:
    def test_diameter_is_sum_of_ranges(self):
        s = space([0, -1, 2], [1, 1, 2.5])
        assert s.l1_diameter_D == pytest.approx(1 + 2 + 0.5)

    def test_linf_bound_covers_box_corners(self):
        s = space([-3, 0], [1, 2])
        assert s.linf_bound == 3.0

    def test_rejects_inverted_box(self):
        with pytest.raises(ValueError):
            space([1.0], [0.0])

    def test_rejects_bad_block_split(self):
        with pytest.raises(DimensionMismatchError):
            space([0, 0], [1, 1], dim_continuous=1, dim_discrete=2)


class TestL1Distance:
    def test_identity(self):
        s = space([0, 0], [1, 1])
        assert l1_distance(point([0, 0], s), point([0, 0], s)) == 0.0

    def test_direct(self):
        s = space([0, 0], [2, 3])
        assert l1_distance(point([1, 2], s), point([0, 0], s)) == 3.0

    def test_signed_coords(self):
        s = space([-1, -1, 0], [1, 1, 2])
        a = point([0.5, -0.5, 1], s)
        b = point([0, 0, 0], s)
        assert l1_distance(a, b) == pytest.approx(2.0)

    def test_dimension_mismatch_is_hard_error(self):
        s2 = space([0, 0], [1, 1])
        s3 = space([0, 0, 0], [1, 1, 1])
        with pytest.raises(DimensionMismatchError):
            l1_distance(point([0, 0], s2), point([0, 0, 0], s3))


class TestClamp:
    def test_inside_unchanged(self):
        s = space([0, 0], [1, 1])
        p = clamp_to_space(np.array([0.25, 0.75]), s)
        assert np.array_equal(p.coords, [0.25, 0.75])

    def test_clips_above(self):
        s = space([0.0], [1.0])
        assert clamp_to_space(np.array([2.0]), s).coords[0] == 1.0

    def test_clips_mixed(self):
        s = space([0, 0], [1, 1])
        p = clamp_to_space(np.array([-1.0, 0.5]), s)
        assert np.array_equal(p.coords, [0.0, 0.5])

    def test_wrong_length(self):
        with pytest.raises(DimensionMismatchError):
            clamp_to_space(np.array([0.5]), space([0, 0], [1, 1]))


def test_param_point_must_live_in_box():
    s = space([0.0], [1.0])
    with pytest.raises(ValueError):
        ParamPoint(np.array([1.5]), s)


def test_param_point_views():
    s = space([0, 0, 0, 0], [1, 1, 1, 1], dim_continuous=2, dim_discrete=2)
    p = point([0.1, 0.2, 0.3, 0.4], s)
    assert np.array_equal(p.theta_c, [0.1, 0.2])
    assert np.array_equal(p.theta_d, [0.3, 0.4])
    assert np.array_equal(p.continuous_block(1, 2), [0.2])


def test_canonicalize_kills_negative_zero():
    out = canonicalize(np.array([-0.0, 0.0, -1.0]))
    assert np.signbit(out[0]) == False  # noqa: E712
    assert out[2] == -1.0


def _pseudo_metric_battery(metric, space_, zdim, sampler, n=10_000, seed=3):
    """Symmetry, zero self-distance, triangle inequality, diameter cap."""
    rng = np.random.default_rng(seed)
    n_triples = 100
    n_z = n // n_triples
    for _ in range(n_triples):
        a = space_.sample_uniform(rng)
        b = space_.sample_uniform(rng)
        c = space_.sample_uniform(rng)
        zs = sampler(rng, n_z)
        for z in zs[:3]:  # scalar-path spot checks
            zc = ContextSample(z, payload_dim=zdim)
            assert eval_rho(metric, a, a, zc) == 0.0
            ab = eval_rho(metric, a, b, zc)
            ba = eval_rho(metric, b, a, zc)
            assert ab == pytest.approx(ba, abs=1e-12)
        ab = metric.eval_batch_fn(a.coords, b.coords, zs)
        bc = metric.eval_batch_fn(b.coords, c.coords, zs)
        ac = metric.eval_batch_fn(a.coords, c.coords, zs)
        assert np.all(ac <= ab + bc + 1e-12)
        assert np.all(ab <= metric.diameter_bound_Drho + 1e-12)
        assert np.all(ab >= 0)


def test_threshold_metric_battery():
    loss = threshold_environment(0.0, 1.0)

    def sampler(rng, k):
        x = rng.random(k)
        y = np.where(rng.random(k) < 0.5, 1.0, -1.0)
        return np.stack([x, y], axis=1)

    _pseudo_metric_battery(loss.metric, loss.space, 1, sampler)


def test_pwa_metric_battery():
    env = affine_tournament_environment(K=3, context_dim=2)
    strat = uniform_box_strategy([-1, -1], [1, 1])
    metric = metric_for(env, strat.smoothness)

    def sampler(rng, k):
        return rng.uniform(-1, 1, size=(k, 2))

    _pseudo_metric_battery(metric, env.space, 0, sampler)


def test_loss_specs_stay_in_unit_interval():
    rng = np.random.default_rng(11)
    thr = threshold_environment(0.0, 1.0)
    n = 10_000
    thetas = rng.random((50, 1))
    zs = np.stack([rng.random(n // 50), np.where(rng.random(n // 50) < 0.5, 1, -1)], axis=1)
    vals = thr.eval_batch(thetas, zs)
    assert np.all((vals >= 0) & (vals <= 1))

    env = affine_tournament_environment(K=2, context_dim=2)
    thetas = np.stack([env.space.sample_uniform(rng).coords for _ in range(50)])
    zs = rng.uniform(-1, 1, size=(n // 50, 2))
    vals = env.eval_batch(thetas, zs)
    assert np.all((vals >= 0) & (vals <= 1))
