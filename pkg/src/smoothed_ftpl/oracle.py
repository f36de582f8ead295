"""Empirical-risk oracles over perturbed cumulative losses.

Three solvers: an exact 1-d threshold minimizer (cell enumeration), an
exhaustive box-grid search, and an alternating heuristic for piecewise
environments (assign modes, refit continuous blocks, local-search the
boundary weights).  Every solver minimizes

    sum_i loss(theta, z_i) + omega(theta)

and reports a suboptimality certificate: 0 for exact solvers, a measured
gap against a grid baseline when one is available, otherwise the string
"uncertified".
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import ContextSample, LossSpec, ParamPoint, ParamSpace, canonicalize
from .perturbation import EXPONENTIAL, GAUSSIAN_PROCESS, PerturbationDraw
from .pwa_env import (
    ClippedSquaredModeLoss,
    PiecewiseLossSpec,
    ThresholdLossSpec,
    TrackingModeLoss,
)

GRID_GUARD = 10_000_000


class UnsupportedProblemError(ValueError):
    """The chosen solver cannot handle this problem shape."""


@dataclass(frozen=True)
class ErmProblem:
    dataset: Tuple[ContextSample, ...]
    loss: LossSpec
    space: ParamSpace
    perturbation: Optional[PerturbationDraw] = None

    def __post_init__(self):
        object.__setattr__(self, "dataset", tuple(self.dataset))

    def context_matrix(self) -> Optional[np.ndarray]:
        if not self.dataset:
            return None
        return np.stack([c.z for c in self.dataset])


@dataclass(frozen=True)
class OracleResult:
    theta_star: ParamPoint
    objective_value: float
    suboptimality_gamma: Union[float, str]
    solver_id: str
    evaluations_count: int

    @property
    def certified_gamma(self) -> Optional[float]:
        """Numeric certificate when one exists (exact solvers report 0)."""
        if isinstance(self.suboptimality_gamma, (int, float)):
            return float(self.suboptimality_gamma)
        return None


Solver = Callable[..., OracleResult]


# ---------------------------------------------------------------------------
# shared objective evaluation
# ---------------------------------------------------------------------------


def _canonical(problem: ErmProblem, thetas: np.ndarray) -> np.ndarray:
    fn = getattr(problem.loss, "canonical_coords", None)
    if fn is None:
        return canonicalize(thetas)
    return np.stack([fn(row) for row in np.atleast_2d(thetas)])


def evaluate_objective(
    problem: ErmProblem, thetas: np.ndarray, pre_canonical: bool = False
) -> Tuple[np.ndarray, np.ndarray]:
    """Objective values for a (P, dim) batch; returns (values, coords used).

    Coordinates are canonicalized (discrete-block renormalization where the
    environment declares it) before evaluation, so the reported objective is
    attained at the returned point.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    coords = thetas if pre_canonical else _canonical(problem, thetas)
    vals = np.zeros(coords.shape[0])
    zs = problem.context_matrix()
    if zs is not None:
        if problem.loss.has_batch():
            vals += problem.loss.eval_batch(coords, zs).sum(axis=1)
        else:
            for p, row in enumerate(coords):
                pt = ParamPoint(row, problem.space)
                vals[p] = sum(problem.loss.eval(pt, c) for c in problem.dataset)
    draw = problem.perturbation
    if draw is not None:
        if draw.variant == EXPONENTIAL:
            vals += -draw.eta * coords @ draw.xi
        elif draw.variant == GAUSSIAN_PROCESS:
            anchor_zs = np.stack([c.z for c in draw.anchors])
            if problem.loss.has_batch():
                anchor_losses = problem.loss.eval_batch(coords, anchor_zs)
            else:
                anchor_losses = np.array(
                    [
                        [
                            problem.loss.eval(ParamPoint(row, problem.space), c)
                            for c in draw.anchors
                        ]
                        for row in coords
                    ]
                )
            vals += draw.eta * anchor_losses @ draw.gammas
    return vals, coords


def _pick_min(values: np.ndarray, coords: np.ndarray) -> int:
    """First index attaining the minimum (exact float compare)."""
    return int(np.argmin(values))


# ---------------------------------------------------------------------------
# exact 1-d threshold solver
# ---------------------------------------------------------------------------


def erm_exact_threshold(problem: ErmProblem, rng=None) -> OracleResult:
    """Exact minimizer for the 1-d threshold loss.

    The objective is piecewise constant in theta on the cells cut by the
    data x's (plus a linear term when an exponential perturbation is
    present).  Cells are scanned left to right; without a perturbation the
    representative of a cell is its midpoint and the leftmost optimal cell
    wins; with one, the linear term is minimized exactly at cell right
    endpoints.  The vacuous problem returns box_lower.
    """
    loss = problem.loss
    if not isinstance(loss, ThresholdLossSpec):
        raise UnsupportedProblemError("erm_exact_threshold needs a threshold loss")
    draw = problem.perturbation
    if draw is not None and draw.variant != EXPONENTIAL:
        raise UnsupportedProblemError("only the exponential perturbation is supported")
    lo = float(problem.space.box_lower[0])
    hi = float(problem.space.box_upper[0])
    slope = 0.0 if draw is None else float(draw.eta * draw.xi[0])

    if not problem.dataset:
        theta = hi if slope > 0 else lo
        obj = -slope * theta + 0.0  # kill -0.0
        return OracleResult(
            ParamPoint(np.array([theta]), problem.space),
            float(obj),
            0.0,
            "exact_threshold",
            1,
        )

    zs = problem.context_matrix()
    xs, ys = zs[:, 0], zs[:, 1]
    breaks = np.unique(np.clip(xs, lo, hi))
    # cells: [lo, b1], (b1, b2], ..., (bm, hi]
    rights = np.append(breaks, hi) if breaks[-1] < hi else breaks
    lefts = np.concatenate([[lo], rights[:-1]])
    mids = 0.5 * (lefts + rights)
    if slope > 0:
        candidates = rights
    else:
        candidates = mids
    # prediction is +1 iff x >= theta; theta = b_i itself still sits in the
    # cell whose points at b_i are predicted +1, matching the half-open cells
    x_plus = np.sort(xs[ys > 0])
    x_minus = np.sort(xs[ys < 0])
    wrong_plus = np.searchsorted(x_plus, candidates, side="left")  # x < theta, y=+1
    wrong_minus = len(x_minus) - np.searchsorted(x_minus, candidates, side="left")
    values = wrong_plus + wrong_minus - slope * candidates
    best = _pick_min(values, candidates[:, None])
    theta = float(candidates[best])
    return OracleResult(
        ParamPoint(np.array([theta]), problem.space),
        float(values[best]),
        0.0,
        "exact_threshold",
        len(candidates),
    )


# ---------------------------------------------------------------------------
# exhaustive grid solver
# ---------------------------------------------------------------------------


def grid_axes(space: ParamSpace, mesh_per_dim: int) -> List[np.ndarray]:
    axes = []
    for i in range(space.dim_total):
        lo, hi = space.box_lower[i], space.box_upper[i]
        axes.append(
            np.array([lo]) if lo == hi else np.linspace(lo, hi, mesh_per_dim)
        )
    return axes


def erm_grid(problem: ErmProblem, mesh_per_dim: int, rng=None) -> OracleResult:
    """Exhaustive search on the axis grid, first grid index wins ties."""
    dim = problem.space.dim_total
    total = mesh_per_dim**dim
    if total > GRID_GUARD:
        raise UnsupportedProblemError(
            f"grid of {total} points exceeds the {GRID_GUARD} guard; "
            "use erm_alternating instead"
        )
    axes = grid_axes(problem.space, mesh_per_dim)
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=1)
    step = max(
        (float(ax[1] - ax[0]) for ax in axes if ax.size > 1),
        default=0.0,
    )
    best_val, best_idx, best_coords = np.inf, -1, None
    # keep candidate-by-dataset blocks around ~4e6 entries
    n_data = len(problem.dataset)
    chunk = int(max(1, min(65536, 4_000_000 // max(1, n_data))))
    for start in range(0, grid.shape[0], chunk):
        vals, coords = evaluate_objective(problem, grid[start : start + chunk])
        idx = int(np.argmin(vals))
        if vals[idx] < best_val:
            best_val, best_idx, best_coords = float(vals[idx]), start + idx, coords[idx]
    return OracleResult(
        ParamPoint(best_coords, problem.space),
        best_val,
        f"grid_step:{step:.6g}",
        f"grid_{mesh_per_dim}",
        grid.shape[0],
    )


# ---------------------------------------------------------------------------
# alternating heuristic for piecewise environments
# ---------------------------------------------------------------------------


def _expo_slope(problem: ErmProblem, index: int) -> float:
    draw = problem.perturbation
    if draw is None or draw.variant != EXPONENTIAL:
        return 0.0
    return float(draw.eta * draw.xi[index])


def _refit_continuous(
    problem: ErmProblem, spec: PiecewiseLossSpec, coords: np.ndarray, zs: np.ndarray
) -> np.ndarray:
    """Per-mode continuous refit at fixed mode assignments."""
    coords = coords.copy()
    modes = spec.modes_of(coords, zs) if zs is not None else None
    cdim = spec.c_dim_per_mode
    ml = spec.mode_losses
    for k in range(spec.K):
        block_slice = slice(k * cdim, (k + 1) * cdim)
        assigned = zs[modes == k] if zs is not None else None
        block = coords[block_slice].copy()
        if isinstance(ml, ClippedSquaredModeLoss) and assigned is not None and len(assigned):
            x = assigned[:, : ml.x_dim]
            y = assigned[:, ml.x_dim : ml.x_dim + ml.y_dim]
            gram = 2.0 * ml.scale * (x.T @ x)
            W = np.empty((ml.y_dim, ml.x_dim))
            for j in range(ml.y_dim):
                xi_row = np.array(
                    [
                        _expo_slope(problem, k * cdim + j * ml.x_dim + col)
                        for col in range(ml.x_dim)
                    ]
                )
                rhs = 2.0 * ml.scale * (x.T @ y[:, j]) + xi_row
                W[j] = np.linalg.lstsq(gram, rhs, rcond=None)[0]
            block = W.ravel()
        elif isinstance(ml, TrackingModeLoss):
            targets = (
                assigned @ np.asarray(ml.target_mats[k]).T + ml.target_offsets[k]
                if assigned is not None and len(assigned)
                else None
            )
            for j in range(cdim):
                cand = [problem.space.box_lower[block_slice][j], problem.space.box_upper[block_slice][j]]
                if targets is not None:
                    cand = np.concatenate([targets[:, j], cand])
                cand = np.unique(np.asarray(cand, dtype=np.float64))
                slope = _expo_slope(problem, k * cdim + j)
                if targets is None:
                    vals = -slope * cand
                else:
                    vals = ml.scale * np.sum(
                        np.abs(cand[:, None] - targets[None, :, j]), axis=1
                    ) - slope * cand
                block[j] = cand[int(np.argmin(vals))]
        else:
            # generic coordinate descent on a per-coordinate candidate grid
            for j in range(cdim):
                lo = problem.space.box_lower[block_slice][j]
                hi = problem.space.box_upper[block_slice][j]
                cand = np.linspace(lo, hi, 33)
                trial = np.repeat(coords[None, :], cand.size, axis=0)
                trial[:, k * cdim + j] = cand
                vals, _ = evaluate_objective(problem, trial)
                block[j] = cand[int(np.argmin(vals))]
        coords[block_slice] = block
    lo = problem.space.box_lower
    hi = problem.space.box_upper
    return np.clip(coords, lo, hi)


def erm_alternating(
    problem: ErmProblem,
    restarts: int = 4,
    max_iters: int = 20,
    rng: Optional[np.random.Generator] = None,
    certify_grid_mesh: Optional[int] = None,
) -> OracleResult:
    """Alternating minimization: refit continuous blocks at the current mode
    assignment, then local-search boundary weights on a shrinking mesh.

    The objective is nonincreasing across iterations by construction (each
    accepted move is verified); the best restart wins, with ties broken by
    lexicographically smaller coordinates.
    """
    spec = problem.loss
    if not isinstance(spec, PiecewiseLossSpec):
        raise UnsupportedProblemError("erm_alternating needs a piecewise environment")
    rng = rng if rng is not None else np.random.default_rng(0)
    zs = problem.context_matrix()
    space = problem.space
    dc = space.dim_continuous
    evals = 0

    best: Optional[Tuple[float, np.ndarray]] = None
    for restart in range(max(1, restarts)):
        if restart == 0:
            coords = space.center().coords.copy()
        else:
            coords = space.sample_uniform(rng).coords.copy()
        vals, canon = evaluate_objective(problem, coords[None, :])
        coords, obj = canon[0].copy(), float(vals[0])
        evals += 1
        step = float(np.max(space.box_upper - space.box_lower)) / 4.0
        for _ in range(max_iters):
            prev = obj
            trial = _refit_continuous(problem, spec, coords, zs)
            vals, canon = evaluate_objective(problem, trial[None, :])
            evals += 1
            if vals[0] <= obj:
                coords, obj = canon[0].copy(), float(vals[0])
            improved_discrete = False
            for j in range(dc, space.dim_total):
                for delta in (step, -step):
                    cand = coords.copy()
                    cand[j] = np.clip(
                        cand[j] + delta, space.box_lower[j], space.box_upper[j]
                    )
                    vals, canon = evaluate_objective(problem, cand[None, :])
                    evals += 1
                    if vals[0] < obj:
                        coords, obj = canon[0].copy(), float(vals[0])
                        improved_discrete = True
            if obj > prev + 1e-9:
                raise AssertionError("alternating objective increased")
            if not improved_discrete:
                step *= 0.5
            if step < 1e-4 and obj >= prev - 1e-12:
                break
        if (
            best is None
            or obj < best[0]
            or (obj == best[0] and tuple(coords) < tuple(best[1]))
        ):
            best = (obj, coords)

    gamma: Union[float, str] = "uncertified"
    if certify_grid_mesh is not None:
        try:
            ref = erm_grid(problem, certify_grid_mesh)
            gamma = max(0.0, best[0] - ref.objective_value)
        except UnsupportedProblemError:
            gamma = "uncertified"
    return OracleResult(
        ParamPoint(best[1], space), best[0], gamma, "alternating", evals
    )


class IncrementalGridSolver:
    """Grid solver that reuses per-candidate data sums across calls.

    Successive lazy-FTPL problems extend one growing dataset; when the new
    problem's dataset is an extension of the cached one (checked by object
    identity of the boundary elements), only the new contexts are scored.
    One instance serves one run; not thread-safe across runs.
    """

    def __init__(self, mesh_per_dim: int):
        self.mesh_per_dim = mesh_per_dim
        self._grid: Optional[np.ndarray] = None
        self._step = 0.0
        self._data_vals: Optional[np.ndarray] = None
        self._len = 0
        self._first = None
        self._last = None

    def _reset(self, problem: ErmProblem) -> None:
        dim = problem.space.dim_total
        total = self.mesh_per_dim**dim
        if total > GRID_GUARD:
            raise UnsupportedProblemError(
                f"grid of {total} points exceeds the {GRID_GUARD} guard"
            )
        axes = grid_axes(problem.space, self.mesh_per_dim)
        mesh = np.meshgrid(*axes, indexing="ij")
        raw = np.stack([m.ravel() for m in mesh], axis=1)
        self._step = max(
            (float(ax[1] - ax[0]) for ax in axes if ax.size > 1), default=0.0
        )
        self._grid = _canonical(problem, raw)
        self._data_vals = np.zeros(self._grid.shape[0])
        self._len = 0
        self._first = None
        self._last = None

    def _extends(self, dataset: Tuple[ContextSample, ...]) -> bool:
        if self._data_vals is None or len(dataset) < self._len:
            return False
        if self._len == 0:
            return True
        return dataset[0] is self._first and dataset[self._len - 1] is self._last

    def __call__(self, problem: ErmProblem, rng=None) -> OracleResult:
        if self._grid is None or not self._extends(problem.dataset):
            self._reset(problem)
        new = problem.dataset[self._len :]
        if new:
            zs = np.stack([c.z for c in new])
            if problem.loss.has_batch():
                chunk = int(max(1, min(65536, 4_000_000 // max(1, len(new)))))
                for start in range(0, self._grid.shape[0], chunk):
                    block = self._grid[start : start + chunk]
                    self._data_vals[start : start + chunk] += problem.loss.eval_batch(
                        block, zs
                    ).sum(axis=1)
            else:
                for p, row in enumerate(self._grid):
                    pt = ParamPoint(row, problem.space)
                    self._data_vals[p] += sum(problem.loss.eval(pt, c) for c in new)
            self._len = len(problem.dataset)
            self._first = problem.dataset[0]
            self._last = problem.dataset[-1]
        vals = self._data_vals.copy()
        draw = problem.perturbation
        if draw is not None:
            if draw.variant == EXPONENTIAL:
                vals += -draw.eta * self._grid @ draw.xi
            else:
                anchor_zs = np.stack([c.z for c in draw.anchors])
                vals += draw.eta * problem.loss.eval_batch(
                    self._grid, anchor_zs
                ) @ draw.gammas
        best = int(np.argmin(vals))
        return OracleResult(
            ParamPoint(self._grid[best], problem.space),
            float(vals[best]),
            f"grid_step:{self._step:.6g}",
            f"grid_inc_{self.mesh_per_dim}",
            self._grid.shape[0],
        )


def best_in_hindsight(
    dataset: Sequence[ContextSample],
    loss: LossSpec,
    space: ParamSpace,
    solver: Solver,
    rng: Optional[np.random.Generator] = None,
) -> OracleResult:
    """Unperturbed ERM on a fixed dataset (the hindsight comparator)."""
    problem = ErmProblem(tuple(dataset), loss, space, perturbation=None)
    return solver(problem, rng=rng)
