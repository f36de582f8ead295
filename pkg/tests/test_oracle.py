import numpy as np
import pytest

from smoothed_ftpl.core import ContextSample, LossSpec, ParamPoint, ParamSpace
from smoothed_ftpl.oracle import (
    ErmProblem,
    IncrementalGridSolver,
    UnsupportedProblemError,
    best_in_hindsight,
    erm_alternating,
    erm_exact_threshold,
    erm_grid,
    evaluate_objective,
)
from smoothed_ftpl.perturbation import EXPONENTIAL, PerturbationDraw, draw_exponential
from smoothed_ftpl.pwa_env import (
    ClippedSquaredModeLoss,
    ConstantModeLoss,
    PiecewiseLossSpec,
    TournamentBoundarySpec,
    threshold_environment,
)


def rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


def threshold_data(pairs):
    return tuple(ContextSample(np.array([x, y], dtype=float), 1) for x, y in pairs)


THRESHOLD = threshold_environment(0.0, 1.0)


def brute_force_threshold(dataset, slope=0.0, grid_n=10_000):
    """Independent oracle: dense-grid minimum of the threshold objective."""
    grid = np.linspace(0.0, 1.0, grid_n)
    if dataset:
        zs = np.stack([c.z for c in dataset])
        preds = np.where(zs[None, :, 0] >= grid[:, None], 1.0, -1.0)
        errs = (preds != zs[None, :, 1]).sum(axis=1).astype(float)
    else:
        errs = np.zeros(grid_n)
    vals = errs - slope * grid
    i = int(np.argmin(vals))
    return float(vals[i]), float(grid[i])


class TestExactThreshold:
    def test_three_point_instance(self):
        data = threshold_data([(0.2, 1), (0.4, -1), (0.6, 1)])
        res = erm_exact_threshold(ErmProblem(data, THRESHOLD, THRESHOLD.space))
        oracle_val, _ = brute_force_threshold(data)
        assert res.objective_value == oracle_val == 1.0
        # leftmost optimal cell is [0, 0.2]; its midpoint is 0.1
        assert res.theta_star.coords[0] == pytest.approx(0.1)
        assert res.suboptimality_gamma == 0.0

    def test_empty_dataset_no_perturbation(self):
        res = erm_exact_threshold(ErmProblem((), THRESHOLD, THRESHOLD.space))
        assert res.objective_value == 0.0
        assert res.theta_star.coords[0] == 0.0  # box_lower by the vacuous rule

    def test_empty_dataset_with_perturbation(self):
        d = PerturbationDraw(EXPONENTIAL, 0.5, xi=np.array([2.0]))
        res = erm_exact_threshold(ErmProblem((), THRESHOLD, THRESHOLD.space, d))
        assert res.theta_star.coords[0] == 1.0  # maximizes xi * theta
        assert res.objective_value == pytest.approx(-1.0)

    def test_non_threshold_loss_unsupported(self):
        spec = _one_mode_constant_env(0.3)
        with pytest.raises(UnsupportedProblemError):
            erm_exact_threshold(ErmProblem((), spec, spec.space))

    def test_matches_dense_grid_on_random_instances(self):
        g = rng(1)
        for _ in range(100):
            m = int(g.integers(1, 20))
            xs = g.random(m)
            ys = np.where(g.random(m) < 0.5, 1.0, -1.0)
            data = threshold_data(list(zip(xs, ys)))
            res = erm_exact_threshold(ErmProblem(data, THRESHOLD, THRESHOLD.space))
            oracle_val, _ = brute_force_threshold(data, grid_n=100_000)
            assert res.objective_value == oracle_val

    def test_perturbed_instances_stay_global(self):
        g = rng(2)
        for _ in range(25):
            m = int(g.integers(1, 12))
            data = threshold_data(
                list(zip(g.random(m), np.where(g.random(m) < 0.5, 1.0, -1.0)))
            )
            d = draw_exponential(1, float(g.random() * 3), g)
            res = erm_exact_threshold(ErmProblem(data, THRESHOLD, THRESHOLD.space, d))
            slope = d.eta * d.xi[0]
            oracle_val, _ = brute_force_threshold(data, slope=slope, grid_n=100_000)
            # the dense grid can only be slightly better than exact by its
            # linear-term resolution
            assert res.objective_value <= oracle_val + 1e-9


def _one_mode_constant_env(c, c_dim=1):
    boundary = TournamentBoundarySpec(K=1, context_dim=1)
    space = ParamSpace(
        np.zeros(c_dim), np.ones(c_dim), dim_continuous=c_dim, dim_discrete=0
    )
    return PiecewiseLossSpec(
        boundary=boundary,
        mode_losses=ConstantModeLoss([c]),
        space=space,
        name="const",
    )


class QuadraticLoss(LossSpec):
    """(theta - 0.5)^2 on [0, 1], independent of the context."""

    def __init__(self):
        self.space = ParamSpace(np.zeros(1), np.ones(1))

    def eval(self, theta, z):
        return float((theta.coords[0] - 0.5) ** 2)

    def eval_batch(self, thetas, zs):
        v = (np.atleast_2d(thetas)[:, 0] - 0.5) ** 2
        return np.repeat(v[:, None], np.atleast_2d(zs).shape[0], axis=1)


class TestGrid:
    def test_constant_loss_returns_first_grid_point(self):
        spec = _one_mode_constant_env(0.25, c_dim=2)
        data = (ContextSample(np.array([0.1])),) * 4
        res = erm_grid(ErmProblem(data, spec, spec.space), 5)
        assert np.array_equal(res.theta_star.coords, spec.space.box_lower)
        assert res.objective_value == pytest.approx(0.25 * 4)

    def test_quadratic_mesh_contains_optimum(self):
        loss = QuadraticLoss()
        data = (ContextSample(np.zeros(1)),)
        res = erm_grid(ErmProblem(data, loss, loss.space), 101)
        assert res.theta_star.coords[0] == pytest.approx(0.5, abs=0)

    def test_agrees_with_exact_threshold(self):
        data = threshold_data([(0.2, 1), (0.4, -1), (0.6, 1)])
        res = erm_grid(ErmProblem(data, THRESHOLD, THRESHOLD.space), 10_000)
        assert res.objective_value == 1.0

    def test_guard_rejects_huge_meshes(self):
        spec = _one_mode_constant_env(0.1, c_dim=8)
        with pytest.raises(UnsupportedProblemError, match="erm_alternating"):
            erm_grid(ErmProblem((), spec, spec.space), 10)


def _regression_env(K, x_dim, seed=0, scale=0.125):
    g = rng(seed)
    boundary = TournamentBoundarySpec(K=K, context_dim=x_dim + 1)
    c_dim = x_dim  # one output row per mode
    dc, dd = K * c_dim, boundary.theta_d_dim
    space = ParamSpace(
        np.concatenate([-np.ones(dc), -np.ones(dd)]),
        np.concatenate([np.ones(dc), np.ones(dd)]),
        dim_continuous=dc,
        dim_discrete=dd,
    )
    spec = PiecewiseLossSpec(
        boundary=boundary,
        mode_losses=ClippedSquaredModeLoss(x_dim=x_dim, y_dim=1, scale=scale),
        space=space,
        normalize_discrete=True,
        name="pwa_regression",
    )
    return spec, g


class TestAlternating:
    def test_single_mode_quadratic_matches_least_squares(self):
        spec, g = _regression_env(K=1, x_dim=2, seed=3)
        X = g.uniform(-1, 1, size=(30, 2))
        W_true = np.array([[0.4, -0.3]])
        y = X @ W_true.T
        data = tuple(
            ContextSample(np.concatenate([x, yy]), 1) for x, yy in zip(X, y)
        )
        res = erm_alternating(
            ErmProblem(data, spec, spec.space), restarts=2, max_iters=10, rng=rng(4)
        )
        w_ls, *_ = np.linalg.lstsq(X, y.ravel(), rcond=None)
        assert np.max(np.abs(res.theta_star.coords[:2] - w_ls)) < 1e-8
        assert res.objective_value < 1e-12

    def test_zero_dataset(self):
        spec, _ = _regression_env(K=1, x_dim=1)
        res = erm_alternating(ErmProblem((), spec, spec.space), rng=rng(5))
        assert res.objective_value == 0.0

    def test_two_mode_planted_not_worse_than_grid(self):
        spec, g = _regression_env(K=2, x_dim=2, seed=6)
        # plant a discrete block and per-mode weights, generate exact-fit data
        td = g.standard_normal(spec.boundary.theta_d_dim)
        td /= np.linalg.norm(td)
        W = g.uniform(-0.8, 0.8, size=(2, 2))
        xs = g.uniform(-1, 1, size=(20, 3))  # context = (x1, x2, y)
        modes = spec.boundary
        data = []
        from smoothed_ftpl.pwa_env import modes_tournament_batch

        ks = modes_tournament_batch(spec.boundary, td, xs)
        for row, k in zip(xs, ks):
            y = float(W[k] @ row[:2])
            data.append(ContextSample(np.array([row[0], row[1], y]), 1))
        problem = ErmProblem(tuple(data), spec, spec.space)
        res = erm_alternating(problem, restarts=4, max_iters=12, rng=rng(7))
        grid = erm_grid(problem, 5)
        step = 2.0 / 4.0
        assert res.objective_value <= grid.objective_value + step
        assert res.suboptimality_gamma == "uncertified"

    def test_grid_certificate_when_requested(self):
        spec, g = _regression_env(K=1, x_dim=1, seed=8)
        data = (ContextSample(np.array([0.5, 0.2]), 1),)
        res = erm_alternating(
            ErmProblem(data, spec, spec.space), rng=rng(9), certify_grid_mesh=21
        )
        assert isinstance(res.suboptimality_gamma, float)
        assert res.suboptimality_gamma >= 0.0

    def test_wrong_environment_rejected(self):
        with pytest.raises(UnsupportedProblemError):
            erm_alternating(ErmProblem((), THRESHOLD, THRESHOLD.space), rng=rng(0))


class TestObjectiveDecomposition:
    def test_perturbation_linearity_exact(self):
        g = rng(10)
        data = threshold_data(
            list(zip(g.random(15), np.where(g.random(15) < 0.5, 1.0, -1.0)))
        )
        draw = draw_exponential(1, 2.5, g)
        problem = ErmProblem(data, THRESHOLD, THRESHOLD.space, draw)
        for _ in range(20):
            theta = THRESHOLD.space.sample_uniform(g)
            vals, _ = evaluate_objective(problem, theta.coords[None, :])
            manual = sum(
                THRESHOLD.eval(theta, c) for c in data
            ) + (-draw.eta * draw.xi[0] * theta.coords[0])
            assert abs(vals[0] - manual) < 1e-12


class TestBestInHindsight:
    def test_empty(self):
        res = best_in_hindsight((), THRESHOLD, THRESHOLD.space, erm_exact_threshold)
        assert res.objective_value == 0.0

    def test_realizable_reaches_zero(self):
        g = rng(11)
        xs = g.random(40)
        ys = np.where(xs >= 0.35, 1.0, -1.0)
        data = threshold_data(list(zip(xs, ys)))
        res = best_in_hindsight(data, THRESHOLD, THRESHOLD.space, erm_exact_threshold)
        assert res.objective_value == 0.0

    def test_three_point_instance(self):
        data = threshold_data([(0.2, 1), (0.4, -1), (0.6, 1)])
        res = best_in_hindsight(data, THRESHOLD, THRESHOLD.space, erm_exact_threshold)
        assert res.objective_value == 1.0


class TestIncrementalGridSolver:
    def test_matches_fresh_grid_on_growing_prefixes(self):
        g = rng(12)
        solver = IncrementalGridSolver(101)
        data = threshold_data(
            list(zip(g.random(30), np.where(g.random(30) < 0.5, 1.0, -1.0)))
        )
        for cut in (0, 5, 17, 30):
            prob = ErmProblem(data[:cut], THRESHOLD, THRESHOLD.space)
            inc = solver(prob)
            fresh = erm_grid(prob, 101)
            assert inc.objective_value == pytest.approx(
                fresh.objective_value, abs=1e-9
            )

    def test_resets_on_unrelated_dataset(self):
        solver = IncrementalGridSolver(51)
        a = threshold_data([(0.2, 1), (0.8, -1)])
        b = threshold_data([(0.6, -1)])
        solver(ErmProblem(a, THRESHOLD, THRESHOLD.space))
        res = solver(ErmProblem(b, THRESHOLD, THRESHOLD.space))
        fresh = erm_grid(ErmProblem(b, THRESHOLD, THRESHOLD.space), 51)
        assert res.objective_value == pytest.approx(fresh.objective_value)
