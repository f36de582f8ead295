import numpy as np
import pytest

from smoothed_ftpl.core import ContextSample, ParamPoint, ParamSpace
from smoothed_ftpl.perturbation import (
    EXPONENTIAL,
    GAUSSIAN_PROCESS,
    PerturbationDraw,
    draw_exponential,
    draw_gaussian_process,
    eval_perturbation,
    sup_perturbation_bound,
)


def rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


class TestDrawExponential:
    def test_support_nonnegative(self):
        d = draw_exponential(3, 1.0, rng(1))
        assert d.xi.shape == (3,) and np.all(d.xi >= 0)

    def test_eta_zero_contributes_nothing(self):
        d = draw_exponential(4, 0.0, rng(2))
        assert eval_perturbation(d, np.ones(4)) == 0.0

    def test_coordinate_mean_close_to_one(self):
        # one big draw gives 1e5 iid coordinate triples through the same path
        d = draw_exponential(300_000, 1.0, rng(3))
        cols = d.xi.reshape(100_000, 3)
        for j in range(3):
            assert 0.98 <= float(np.mean(cols[:, j])) <= 1.02

    def test_deterministic_per_seed(self):
        a = draw_exponential(5, 1.0, rng(42)).xi
        b = draw_exponential(5, 1.0, rng(42)).xi
        assert np.array_equal(a, b)


class TestDrawGaussianProcess:
    def test_single_anchor_formula(self):
        d = draw_gaussian_process(lambda g: np.array([0.7]), 1, 2.0, rng(4))
        gamma = float(d.gammas[0])
        val = eval_perturbation(d, lambda x: 3.0)
        assert val == pytest.approx(2.0 * gamma * 3.0)

    def test_eta_zero(self):
        d = draw_gaussian_process(lambda g: np.zeros(1), 3, 0.0, rng(5))
        assert eval_perturbation(d, lambda x: 123.0) == 0.0

    def test_variance_scales_with_anchor_count(self):
        m = 4
        g = rng(6)
        vals = []
        for _ in range(100_000):
            d = draw_gaussian_process(lambda r: np.zeros(1), m, 1.0, g)
            vals.append(float(np.sum(d.gammas)))  # omega(f=1)/eta
        v = float(np.var(vals))
        assert v == pytest.approx(m, rel=0.05)


class TestEvalPerturbation:
    def test_linear_example(self):
        d = PerturbationDraw(EXPONENTIAL, 0.5, xi=np.array([1.0, 2.0]))
        assert eval_perturbation(d, np.array([1.0, 1.0])) == pytest.approx(-1.5)

    def test_gaussian_cancellation(self):
        d = PerturbationDraw(
            GAUSSIAN_PROCESS,
            1.0,
            anchors=(ContextSample(np.zeros(1)), ContextSample(np.ones(1))),
            gammas=np.array([1.0, -1.0]),
        )
        assert eval_perturbation(d, lambda x: 2.0) == 0.0

    def test_kind_mismatch(self):
        d = PerturbationDraw(EXPONENTIAL, 1.0, xi=np.ones(2))
        with pytest.raises(TypeError):
            eval_perturbation(d, lambda x: 1.0)
        g = PerturbationDraw(
            GAUSSIAN_PROCESS, 1.0, anchors=(ContextSample(np.zeros(1)),),
            gammas=np.ones(1),
        )
        with pytest.raises(TypeError):
            eval_perturbation(g, np.ones(2))

    def test_linear_in_eta_exactly(self):
        xi = rng(7).random(6)
        theta = rng(8).random(6)
        for eta in (0.25, 1.0, 3.5):
            lo = eval_perturbation(PerturbationDraw(EXPONENTIAL, eta, xi=xi), theta)
            hi = eval_perturbation(PerturbationDraw(EXPONENTIAL, 2 * eta, xi=xi), theta)
            assert hi == 2.0 * lo  # exact: scaling by two commutes with rounding


class TestSupBound:
    def test_certified_value(self):
        s = ParamSpace(np.full(3, -1.0), np.full(3, 1.0))
        d = PerturbationDraw(EXPONENTIAL, 1.0, xi=np.ones(3))
        assert sup_perturbation_bound(s, d).certified == 3.0

    def test_eta_zero(self):
        s = ParamSpace(np.zeros(2), np.ones(2))
        d = PerturbationDraw(EXPONENTIAL, 0.0, xi=np.ones(2))
        b = sup_perturbation_bound(s, d)
        assert b.certified == 0.0 and b.realized == 0.0

    def test_realized_sup_example(self):
        s = ParamSpace(np.zeros(2), np.ones(2))
        d = PerturbationDraw(EXPONENTIAL, 1.0, xi=np.array([2.0, 3.0]))
        assert sup_perturbation_bound(s, d).realized == 5.0

    def test_gaussian_unsupported(self):
        s = ParamSpace(np.zeros(1), np.ones(1))
        d = PerturbationDraw(
            GAUSSIAN_PROCESS, 1.0, anchors=(ContextSample(np.zeros(1)),),
            gammas=np.ones(1),
        )
        with pytest.raises(ValueError):
            sup_perturbation_bound(s, d)

    def test_realized_within_scaled_certificate_and_mean_below(self):
        # per draw: realized <= certified * ||xi||_1 / dim; on an asymmetric
        # box the mean realized sup sits strictly below the certificate
        s = ParamSpace(np.array([0.0, 0.0]), np.array([1.0, 0.5]))
        g = rng(9)
        realized = []
        for _ in range(10_000):
            d = draw_exponential(2, 1.0, g)
            b = sup_perturbation_bound(s, d)
            assert b.realized <= b.certified * np.sum(d.xi) / 2 + 1e-12
            realized.append(b.realized)
        certified = 1.0 * s.linf_bound * 2
        assert float(np.mean(realized)) <= certified
