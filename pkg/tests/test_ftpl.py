import math

import numpy as np
import pytest

from smoothed_ftpl.core import ContextSample
from smoothed_ftpl.ftpl import (
    EpochSchedule,
    HyperParams,
    OnlineEnvironment,
    epoch_of,
    run_lazy_ftpl,
    tune_affine,
    tune_margin,
    tune_planning,
    tune_polynomial,
)
from smoothed_ftpl.oracle import IncrementalGridSolver, best_in_hindsight, erm_exact_threshold
from smoothed_ftpl.pwa_env import threshold_environment, threshold_labeler
from smoothed_ftpl.smoothing import uniform_box_strategy


def threshold_env(theta_star=0.3, flip=0.1, sigma_dir=1.0):
    loss = threshold_environment(0.0, 1.0, sigma_dir=sigma_dir)
    adv = uniform_box_strategy(
        [0.0], [1.0], labeler=threshold_labeler(theta_star, flip), payload_dim=1
    )
    return OnlineEnvironment(
        name="threshold",
        space=loss.space,
        loss=loss,
        adversary=adv,
        metric=loss.metric,
        gp_base_sampler=lambda rng: np.array([rng.random(), 1.0]),
    )


class TestEpochs:
    def test_epoch_of_examples(self):
        s = EpochSchedule(T=20, n=5)
        assert epoch_of(1, s) == 1
        assert epoch_of(5, s) == 1
        assert epoch_of(6, s) == 2

    def test_out_of_range(self):
        s = EpochSchedule(T=10, n=3)
        with pytest.raises(ValueError):
            epoch_of(0, s)
        with pytest.raises(ValueError):
            epoch_of(11, s)

    def test_epochs_partition_horizon(self):
        for T in (1, 7, 10, 23):
            for n in (1, 2, 5, 9):
                s = EpochSchedule(T, n)
                steps = [t for tau in range(1, s.num_epochs + 1) for t in s.steps_in(tau)]
                assert steps == list(range(1, T + 1))


class TestTuning:
    def test_affine_reference_value(self):
        h = tune_affine(10_000, K=2, d=2, D=1, B=1, A=1, a=1, sigma_dir=0.5)
        expected_eta = (10_000 * 4 * 2 / 0.5) ** (2.0 / 3.0)
        assert h.eta == pytest.approx(expected_eta, rel=1e-12)
        assert h.n == round(math.sqrt(expected_eta)) == 54

    def test_affine_scaling_in_T(self):
        base = tune_affine(1000, 2, 2, 1, 1, 1, 1, 0.5)
        scaled = tune_affine(8000, 2, 2, 1, 1, 1, 1, 0.5)
        assert scaled.eta == pytest.approx(4.0 * base.eta, rel=1e-12)

    def test_affine_huge_sigma_clamps_n(self):
        h = tune_affine(100, 1, 1, 1, 1, 1, 1, 1e12)
        assert h.n == 1 and h.eta < 1e-3

    def test_affine_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            tune_affine(100, 2, 2, 0, 1, 1, 1, 0.5)

    def test_polynomial_reference_value(self):
        h = tune_polynomial(10_000, K=2, r=2, d=2, D=1, B=1, sigma_poly=1)
        base = 10_000 * 4 * 4 * 4
        assert h.eta == pytest.approx(base ** (6.0 / 7.0), rel=1e-12)
        assert h.n == round(base ** (3.0 / 7.0))

    def test_polynomial_r1_matches_affine_exponents(self):
        hp = tune_polynomial(5000, K=2, r=1, d=3, D=1.5, B=1, sigma_poly=0.5)
        base = 5000 * 4 * 1 * 3 * 1.5 / 0.5
        assert hp.eta == pytest.approx(base ** (2.0 / 3.0), rel=1e-12)
        assert hp.n == round(base ** (1.0 / 3.0))

    def test_polynomial_degenerate_horizon(self):
        assert tune_polynomial(1, 1, 1, 1, 1, 1, 1).n == 1

    def test_planning_reference_value(self):
        h = tune_planning(1000, d=1, H=1, K=1, D=1, L=1, gamma=1, sigma_dir=1)
        assert h.eta == pytest.approx(100.0, rel=1e-12)
        assert h.n == 10

    def test_planning_gamma_scaling(self):
        a = tune_planning(1000, 1, 2, 2, 1, 1, 1.0, 1)
        b = tune_planning(1000, 1, 2, 2, 1, 1, 2.0, 1)
        assert b.eta == pytest.approx(a.eta * 2 ** (-2.0 / 3.0), rel=1e-12)

    def test_planning_reduces_to_affine_shape(self):
        h = tune_planning(3000, d=2, H=1, K=1, D=1.2, L=0.8, gamma=0.5, sigma_dir=0.4)
        expected = 2 ** (1.0 / 3.0) * (3000 * 0.8 * 1.2 / (0.5 * 0.4)) ** (2.0 / 3.0)
        assert h.eta == pytest.approx(expected, rel=1e-12)

    def test_margin_reference_value(self):
        h = tune_margin(1000, K=1, A=1, a=1, d=1, D=1, B=1, gamma=1, sigma_dir=1)
        assert h.eta == pytest.approx(100.0, rel=1e-12)
        assert h.n == 10

    def test_margin_matches_affine_with_k_squared(self):
        hm = tune_margin(2000, K=4, A=1, a=1, d=2, D=1, B=1, gamma=1, sigma_dir=0.5)
        ha = tune_affine(2000, K=2, d=2, D=1, B=1, A=1, a=1, sigma_dir=0.5)
        assert hm.eta == pytest.approx(ha.eta, rel=1e-12)

    def test_margin_cap_at_tiny_gamma(self):
        h = tune_margin(100, 2, 1, 1, 1, 1, 1, 1e-12, 1)
        assert h.eta == 10.0 * 100
        assert h.n == 100  # n capped at T


class TestRunLazyFtpl:
    def test_oracle_call_count(self):
        env = threshold_env()
        rec = run_lazy_ftpl(
            env, erm_exact_threshold, "exponential", HyperParams(eta=1.0, n=5), 10, 0
        )
        assert rec.oracle_call_count == 2

    def test_call_count_sweep(self):
        env = threshold_env()
        for T in (1, 3, 7, 12):
            for n in (1, 2, 5):
                rec = run_lazy_ftpl(
                    env,
                    erm_exact_threshold,
                    "exponential",
                    HyperParams(eta=float(n * n), n=n),
                    T,
                    1,
                )
                assert rec.oracle_call_count == -(-T // n)

    def test_zero_eta_is_follow_the_leader(self):
        env = threshold_env(flip=0.0)
        rec = run_lazy_ftpl(
            env, erm_exact_threshold, "exponential", HyperParams(eta=0.0, n=1), 2, 7
        )
        # the second epoch solves on z_1 alone: its exact minimizer has zero
        # loss on z_1
        z1 = ContextSample(rec.contexts[0], payload_dim=1)
        theta2 = rec.epoch_thetas[1]
        from smoothed_ftpl.core import ParamPoint

        assert env.loss.eval(ParamPoint(theta2, env.space), z1) == 0.0

    def test_laziness_within_epochs(self):
        env = threshold_env()
        rec = run_lazy_ftpl(
            env, erm_exact_threshold, "exponential", HyperParams(eta=25.0, n=5), 23, 3
        )
        # step losses must equal a replay of the recorded epoch parameter
        for t in range(rec.T):
            theta = rec.epoch_thetas[rec.step_epochs[t] - 1]
            replay = env.loss.eval_batch(theta[None, :], rec.contexts[t][None, :])
            assert replay[0, 0] == rec.losses[t]

    def test_bitwise_reproducibility(self):
        env = threshold_env()
        h = HyperParams(eta=30.0, n=4)
        a = run_lazy_ftpl(env, erm_exact_threshold, "exponential", h, 40, 11)
        b = run_lazy_ftpl(env, erm_exact_threshold, "exponential", h, 40, 11)
        assert np.array_equal(a.contexts, b.contexts)
        assert np.array_equal(a.losses, b.losses)
        assert np.array_equal(a.epoch_thetas, b.epoch_thetas)

    def test_epoch_perturbations_are_distinct(self):
        env = threshold_env()
        rec = run_lazy_ftpl(
            env, erm_exact_threshold, "exponential", HyperParams(eta=100.0, n=5), 30, 5
        )
        xi_l1 = [s["xi_l1"] for s in rec.perturbation_summaries]
        assert len(set(xi_l1)) == len(xi_l1)

    def test_eta_below_n_squared_warns(self):
        env = threshold_env()
        rec = run_lazy_ftpl(
            env, erm_exact_threshold, "exponential", HyperParams(eta=3.0, n=5), 10, 0
        )
        assert "eta_below_n_squared" in rec.warnings

    def test_beats_fixed_midpoint_policy(self):
        env = threshold_env(theta_star=0.3, flip=0.1)
        T = 2000
        h = tune_affine(T, K=2, d=1, D=1, B=1, A=1, a=1, sigma_dir=1.0)
        rec = run_lazy_ftpl(env, erm_exact_threshold, "exponential", h, T, 17)
        hind = best_in_hindsight(
            rec.context_samples(), env.loss, env.space, erm_exact_threshold
        )
        midpoint = np.array([[0.5]])
        mid_loss = float(env.loss.eval_batch(midpoint, rec.contexts).sum())
        learner_regret = rec.cumulative_loss - hind.objective_value
        midpoint_regret = mid_loss - hind.objective_value
        assert learner_regret <= midpoint_regret

    def test_gaussian_process_variant_runs(self):
        env = threshold_env()
        rec = run_lazy_ftpl(
            env,
            IncrementalGridSolver(101),
            "gaussian_process",
            HyperParams(eta=0.5, n=4),
            16,
            2,
            gp_anchors=4,
        )
        assert rec.oracle_call_count == 4
        assert rec.valid
        assert all(s["variant"] == "gaussian_process" for s in rec.perturbation_summaries)

    def test_unknown_perturbation_kind(self):
        env = threshold_env()
        with pytest.raises(ValueError):
            run_lazy_ftpl(
                env, erm_exact_threshold, "gumbel", HyperParams(eta=1.0, n=1), 5, 0
            )

    def test_solver_failure_flags_partial_record(self):
        env = threshold_env()

        def broken(problem, rng=None):
            raise RuntimeError("boom")

        rec = run_lazy_ftpl(
            env, broken, "exponential", HyperParams(eta=1.0, n=2), 6, 0
        )
        assert not rec.valid
        assert rec.oracle_call_count == 0
