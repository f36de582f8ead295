"""Measurement and validation: regret, stability, bracket covers,
martingale concentration, and scaling-exponent fits.

The sup over a whole distribution class is never computable, so validators
substitute a finite witness battery of class members and say so in their
reports; class-level expectations in bounds use the declared contraction
constants, which only loosens the checked inequality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .core import ContextSample, ParamPoint, ParamSpace, PseudoMetricSpec
from .ftpl import OnlineEnvironment, RunRecord
from .mcstats import mean_and_se
from .oracle import OracleResult, Solver, best_in_hindsight
from .smoothing import AdversaryStrategy, RunHistory, SmoothnessClass, sample_context

# ---------------------------------------------------------------------------
# regret and stability
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegretResult:
    regret: float
    avg_regret: float
    hindsight: OracleResult


def compute_regret(
    run: RunRecord, env: OnlineEnvironment, solver: Solver
) -> RegretResult:
    """Cumulative loss minus the best fixed parameter on the realized stream."""
    if not run.valid:
        raise ValueError("cannot score an invalid (aborted) run")
    hindsight = best_in_hindsight(run.context_samples(), env.loss, env.space, solver)
    reg = run.cumulative_loss - hindsight.objective_value
    return RegretResult(float(reg), float(reg / run.T), hindsight)


def stability_trace(run: RunRecord) -> np.ndarray:
    """l1 gaps between consecutive epoch parameters (empty for one epoch)."""
    thetas = run.epoch_thetas
    if thetas.shape[0] < 2:
        return np.zeros(0)
    return np.sum(np.abs(np.diff(thetas, axis=0)), axis=1)


# ---------------------------------------------------------------------------
# bracket covers
# ---------------------------------------------------------------------------

BRACKET_RECIPES = ("affine", "polynomial")


def bracket_cell_radius(
    recipe: str,
    epsilon: float,
    smoothness: SmoothnessClass,
    K: int,
    A: float = 1.0,
    a: float = 1.0,
) -> float:
    """Cell radius of the constructive mesh cover for the given recipe."""
    B = smoothness.sup_bound_B
    if recipe == "affine":
        if smoothness.sigma_dir <= 0:
            raise ValueError("affine recipe needs a directional smoothness scale")
        return a * smoothness.sigma_dir * epsilon / (3.0 * K**2 * A * B)
    if recipe == "polynomial":
        if smoothness.sigma_poly <= 0:
            raise ValueError("polynomial recipe needs a polynomial smoothness scale")
        r = smoothness.degree_r
        return float((smoothness.sigma_poly * epsilon / (3.0 * K**2 * B)) ** r)
    raise ValueError(
        f"unknown bracket recipe {recipe!r}; supported: {', '.join(BRACKET_RECIPES)}"
    )


@dataclass(frozen=True)
class GeneralizedBracket:
    """Axis mesh of l-infinity cells with per-cell radius eps_tilde.

    Centers are generated on demand from the flat cell index (C order); the
    count is exact mesh arithmetic: prod_i ceil(range_i / (2 eps_tilde)).
    """

    space: ParamSpace
    metric: PseudoMetricSpec
    epsilon: float
    eps_tilde: float
    counts: np.ndarray
    recipe_id: str
    class_descriptor: str

    @property
    def count(self) -> int:
        return int(np.prod(self.counts)) if self.counts.size else 1

    def center(self, flat_index: int) -> np.ndarray:
        idx = np.unravel_index(flat_index, tuple(self.counts)) if self.counts.size else ()
        lo, hi = self.space.box_lower, self.space.box_upper
        out = np.empty(self.space.dim_total)
        for i in range(self.space.dim_total):
            rng_i = hi[i] - lo[i]
            if rng_i <= 2.0 * self.eps_tilde:
                out[i] = 0.5 * (lo[i] + hi[i])
            else:
                out[i] = min(lo[i] + (2 * idx[i] + 1) * self.eps_tilde, hi[i] - self.eps_tilde)
        return out

    def cell_bounds(self, flat_index: int) -> Tuple[np.ndarray, np.ndarray]:
        c = self.center(flat_index)
        lo = np.maximum(c - self.eps_tilde, self.space.box_lower)
        hi = np.minimum(c + self.eps_tilde, self.space.box_upper)
        return lo, hi


def build_generalized_bracket(
    space: ParamSpace,
    metric: PseudoMetricSpec,
    smoothness: SmoothnessClass,
    epsilon: float,
    recipe: str,
    K: int,
    A: float = 1.0,
    a: float = 1.0,
) -> GeneralizedBracket:
    """Mesh cover of the box at the recipe's cell radius for target epsilon."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    eps_tilde = bracket_cell_radius(recipe, epsilon, smoothness, K, A=A, a=a)
    ranges = space.box_upper - space.box_lower
    counts = np.maximum(1, np.ceil(ranges / (2.0 * eps_tilde)).astype(np.int64))
    return GeneralizedBracket(
        space=space,
        metric=metric,
        epsilon=epsilon,
        eps_tilde=float(eps_tilde),
        counts=counts,
        recipe_id=recipe,
        class_descriptor=f"{smoothness.kind}:{K=}",
    )


@dataclass(frozen=True)
class BracketCellResult:
    cell_index: int
    worst_strategy: str
    estimate: float
    std_error: float
    passed: bool


@dataclass(frozen=True)
class BracketReport:
    passed: bool
    epsilon: float
    cells_checked: int
    total_cells: int
    worst: Optional[BracketCellResult]
    note: str
    cells: Tuple[BracketCellResult, ...] = ()


def _cell_probes(
    bracket: GeneralizedBracket,
    flat_index: int,
    n_random: int,
    rng: np.random.Generator,
) -> np.ndarray:
    lo, hi = bracket.cell_bounds(flat_index)
    dim = lo.size
    probes = [bracket.center(flat_index)]
    if dim <= 5:
        grids = np.meshgrid(*[np.array([l, h]) for l, h in zip(lo, hi)], indexing="ij")
        probes.extend(np.stack([g.ravel() for g in grids], axis=1))
    else:
        signs = rng.integers(0, 2, size=(32, dim))
        probes.extend(np.where(signs == 0, lo, hi))
    probes.extend(lo + rng.random((n_random, dim)) * (hi - lo))
    return np.asarray(probes)


def verify_bracket(
    bracket: GeneralizedBracket,
    strategies: Sequence[AdversaryStrategy],
    n_mc: int,
    rng: np.random.Generator,
    max_cells: int = 256,
    n_probe_random: int = 32,
) -> BracketReport:
    """Estimate per-cell expected sup of rho over the cell against each
    battery member; a cell passes when the worst estimate is at most
    epsilon + 3 standard errors.

    Large meshes are checked on a deterministic subsample of cells
    (including the first and last), reported as such; verification is
    always "against the battery", never against the abstract class.
    """
    total = bracket.count
    if total <= max_cells:
        cell_indices = list(range(total))
        note = "all cells checked against the strategy battery"
    else:
        picks = {0, total - 1}
        picks.update(int(v) for v in rng.integers(0, total, size=max_cells - 2))
        cell_indices = sorted(picks)
        note = (
            f"mesh of {total} cells subsampled to {len(cell_indices)}; "
            "verified against the strategy battery only"
        )

    # one shared context batch per strategy, reused across cells
    z_batches = []
    for strat in strategies:
        srng = np.random.Generator(np.random.Philox(rng.integers(0, 2**63)))
        history = RunHistory()
        z_batches.append(
            (strat.name, np.stack([sample_context(strat, history, srng).z for _ in range(n_mc)]))
        )

    results: List[BracketCellResult] = []
    worst: Optional[BracketCellResult] = None
    all_pass = True
    for ci in cell_indices:
        probes = _cell_probes(bracket, ci, n_probe_random, rng)
        center = bracket.center(ci)
        worst_mean, worst_se, worst_name = -math.inf, 0.0, ""
        for name, zs in z_batches:
            sup_rho = np.zeros(zs.shape[0])
            for p in probes:
                if bracket.metric.eval_batch_fn is not None:
                    vals = bracket.metric.eval_batch_fn(p, center, zs)
                else:
                    pp = ParamPoint(p, bracket.space)
                    cc = ParamPoint(center, bracket.space)
                    vals = np.array(
                        [bracket.metric.eval_fn(pp, cc, ContextSample(z)) for z in zs]
                    )
                sup_rho = np.maximum(sup_rho, vals)
            mean, se = mean_and_se(sup_rho)
            if mean > worst_mean:
                worst_mean, worst_se, worst_name = mean, se, name
        ok = worst_mean <= bracket.epsilon + 3.0 * worst_se
        res = BracketCellResult(ci, worst_name, worst_mean, worst_se, ok)
        results.append(res)
        all_pass = all_pass and ok
        if worst is None or res.estimate > worst.estimate:
            worst = res
    return BracketReport(
        passed=all_pass,
        epsilon=bracket.epsilon,
        cells_checked=len(cell_indices),
        total_cells=total,
        worst=worst,
        note=note,
        cells=tuple(results),
    )


# ---------------------------------------------------------------------------
# concentration of the pseudo-metric sums
# ---------------------------------------------------------------------------


@dataclass
class ConcentrationTrial:
    """One configuration of the uniform deviation check.

    `bracket_size` is the constructive mesh count standing in for the true
    minimal cover (plugging an upper bound only loosens the right side).
    `sup_mean_rho` overrides the class-level expectation bound; the default
    uses the declared contraction constants, again an upper bound.
    """

    n: int
    adversary_factory: Callable[[], AdversaryStrategy]
    metric: PseudoMetricSpec
    space: ParamSpace
    epsilon: float
    delta: float
    bracket_size: int
    n_trials: int
    pairs_a: np.ndarray  # (P, dim)
    pairs_b: np.ndarray  # (P, dim)
    sup_mean_rho: Optional[Callable[[np.ndarray, np.ndarray], float]] = None

    def __post_init__(self):
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (0, 1)")


@dataclass(frozen=True)
class ConcentrationReport:
    violation_rate: float
    n_trials: int
    n_violations: int
    rhs_values: np.ndarray
    worst_margin: float  # max over trials/pairs of LHS - RHS (negative = slack)

    @property
    def std_error(self) -> float:
        p = self.violation_rate
        return math.sqrt(max(p * (1 - p), 0.0) / max(self.n_trials, 1))


def check_concentration(
    trial: ConcentrationTrial, rng: np.random.Generator
) -> ConcentrationReport:
    """Empirical violation rate of the uniform deviation inequality

        |sum_i rho(theta, theta', z_i)|
            <= 4 n sup-mean-rho + 8 eps n + 6 D^2 log(2 N / delta)

    over the probe pairs, for adaptively sampled context streams."""
    P = trial.pairs_a.shape[0]
    D = trial.metric.diameter_bound_Drho
    log_term = 6.0 * D**2 * math.log(2.0 * trial.bracket_size / trial.delta)
    sup_fn = trial.sup_mean_rho
    if sup_fn is None:
        def sup_fn(a, b):
            return trial.metric.mean_bound(
                ParamPoint(a, trial.space), ParamPoint(b, trial.space)
            )

    rhs = np.array(
        [
            4.0 * trial.n * sup_fn(trial.pairs_a[p], trial.pairs_b[p])
            + 8.0 * trial.epsilon * trial.n
            + log_term
            for p in range(P)
        ]
    )
    violations = 0
    worst = -math.inf
    for _ in range(trial.n_trials):
        strat = trial.adversary_factory()
        history = RunHistory()
        zs = (
            np.stack(
                [sample_context(strat, history, rng).z for _ in range(trial.n)]
            )
            if trial.n > 0
            else np.zeros((0, trial.space.dim_total))
        )
        bad = False
        for p in range(P):
            if trial.n == 0:
                lhs = 0.0
            elif trial.metric.eval_batch_fn is not None:
                lhs = abs(
                    float(
                        np.sum(
                            trial.metric.eval_batch_fn(
                                trial.pairs_a[p], trial.pairs_b[p], zs
                            )
                        )
                    )
                )
            else:
                pa = ParamPoint(trial.pairs_a[p], trial.space)
                pb = ParamPoint(trial.pairs_b[p], trial.space)
                lhs = abs(
                    sum(trial.metric.eval_fn(pa, pb, ContextSample(z)) for z in zs)
                )
            worst = max(worst, lhs - rhs[p])
            if lhs > rhs[p]:
                bad = True
        violations += bad
    return ConcentrationReport(
        violation_rate=violations / max(trial.n_trials, 1),
        n_trials=trial.n_trials,
        n_violations=violations,
        rhs_values=rhs,
        worst_margin=worst,
    )


# ---------------------------------------------------------------------------
# scaling fits and oracle complexity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    stderr: float
    n_used: int
    n_dropped: int


def fit_regret_exponent(series: Sequence[Tuple[float, float]]) -> ExponentFit:
    """Least-squares slope of log(regret) against log(T).

    Nonpositive regret points are dropped (counted in the report); fewer
    than two usable points is an error, fewer than four is discouraged by
    the callers' preconditions.
    """
    pts = [(t, r) for t, r in series if r > 0 and t > 0]
    dropped = len(series) - len(pts)
    if len(pts) < 2:
        raise ValueError("need at least two positive points for a log-log fit")
    x = np.log([t for t, _ in pts])
    y = np.log([r for _, r in pts])
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, res, _, _ = np.linalg.lstsq(A, y, rcond=None)
    slope = float(coef[0])
    n = len(pts)
    if n > 2 and res.size:
        s2 = float(res[0]) / (n - 2)
        sxx = float(np.sum((x - np.mean(x)) ** 2))
        stderr = math.sqrt(s2 / sxx) if sxx > 0 else math.inf
    else:
        stderr = 0.0
    return ExponentFit(slope, stderr, n, dropped)


def oracle_complexity(
    entries: Sequence[Tuple[int, float]], epsilon_target: float
) -> Optional[int]:
    """Smallest oracle-call count whose mean average regret meets the target.

    `entries` holds (oracle_call_count, avg_regret) for each run; runs with
    the same call count (different seeds) are averaged.  None means the
    target was not reached.
    """
    by_calls: dict[int, List[float]] = {}
    for calls, avg in entries:
        by_calls.setdefault(int(calls), []).append(float(avg))
    feasible = [
        calls for calls, vals in by_calls.items() if float(np.mean(vals)) <= epsilon_target
    ]
    return min(feasible) if feasible else None
