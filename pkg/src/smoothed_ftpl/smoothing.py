"""Constrained adversaries and empirical smoothness estimators.

An adversary is a history-dependent sampler together with a declared
smoothness class.  Three built-in strategies ship as the standard test
battery:

* iid uniform on a box,
* adaptive mean-shift plus bounded uniform noise,
* worst-case-greedy mean (maximizes the learner's current expected loss on
  a probe grid) plus the same noise.

The noise windows of the adaptive strategies are always clamped inside the
context box, so the declared smoothness holds exactly (no boundary atoms
from clipping).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .core import ContextSample
from .polynomials import coeff_top_norm, poly_eval


class SmoothnessContractError(RuntimeError):
    """A strategy emitted a sample violating its declared class."""


@dataclass(frozen=True)
class SmoothnessClass:
    """Declared constraint on the adversary's conditional laws.

    kind is one of "smooth" (density ratio vs a named base measure bounded
    by 1/sigma), "directional" (every 1-d projection has Lebesgue density
    at most 1/sigma_dir), or "polynomial" (anti-concentration of degree-r
    polynomials with unit top coefficient norm, scale sigma_poly).
    """

    kind: str
    context_dim: int
    sup_bound_B: float
    sigma: float = 0.0
    base_measure: str = "lebesgue"
    sigma_dir: float = 0.0
    sigma_poly: float = 0.0
    degree_r: int = 1

    def __post_init__(self):
        if self.kind not in ("smooth", "directional", "polynomial"):
            raise ValueError(f"unknown smoothness kind {self.kind!r}")
        if self.kind == "smooth" and not (0.0 < self.sigma <= 1.0):
            raise ValueError("sigma must lie in (0, 1]")
        if self.kind == "directional" and self.sigma_dir <= 0:
            raise ValueError("sigma_dir must be positive")
        if self.kind == "polynomial":
            if self.sigma_poly <= 0 or self.degree_r < 1:
                raise ValueError("need sigma_poly > 0 and degree_r >= 1")
        if self.sup_bound_B <= 0:
            raise ValueError("sup_bound_B must be positive")


@dataclass
class RunHistory:
    """Append-only record of past contexts and past played parameters."""

    contexts: List[np.ndarray] = field(default_factory=list)
    thetas: List[np.ndarray] = field(default_factory=list)

    def append(self, z: np.ndarray, theta: Optional[np.ndarray]) -> None:
        self.contexts.append(np.asarray(z, dtype=np.float64))
        if theta is not None:
            self.thetas.append(np.asarray(theta, dtype=np.float64))

    @property
    def t(self) -> int:
        return len(self.contexts)

    def last_theta(self) -> Optional[np.ndarray]:
        return self.thetas[-1] if self.thetas else None

    def last_context(self) -> Optional[np.ndarray]:
        return self.contexts[-1] if self.contexts else None


@dataclass(frozen=True)
class AdversaryStrategy:
    """A sampleable, history-dependent context law with a declared class.

    The policy is a pure function of (history, rng); the generator is owned
    by whoever drives the run, so identical (seed, history) reproduces the
    sample bit-for-bit.
    """

    name: str
    smoothness: SmoothnessClass
    policy: Callable[[RunHistory, np.random.Generator], np.ndarray]
    payload_dim: int = 0
    rng_stream: int = 0


def sample_context(
    strategy: AdversaryStrategy, history: RunHistory, rng: np.random.Generator
) -> ContextSample:
    """Draw one context; a sample breaking the declared bound is a hard error."""
    z = np.asarray(strategy.policy(history, rng), dtype=np.float64)
    bound = strategy.smoothness.sup_bound_B
    if np.max(np.abs(z)) > bound + 1e-12:
        raise SmoothnessContractError(
            f"strategy {strategy.name!r} emitted |z|_inf = {np.max(np.abs(z)):.6g} "
            f"> declared bound {bound}"
        )
    return ContextSample(z, payload_dim=strategy.payload_dim)


# ---------------------------------------------------------------------------
# built-in strategies
# ---------------------------------------------------------------------------

Labeler = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def _uniform_box_sigma_dir(lower: np.ndarray, upper: np.ndarray) -> float:
    # projection of a uniform box onto any unit direction has density at most
    # sqrt(d) / (shortest side), so this declaration is always valid
    sides = upper - lower
    d = sides.size
    return float(np.min(sides) / math.sqrt(d))


def _append_payload(
    x: np.ndarray, labeler: Optional[Labeler], rng: np.random.Generator
) -> np.ndarray:
    if labeler is None:
        return x
    return np.concatenate([x, np.atleast_1d(labeler(x, rng))])


def uniform_box_strategy(
    lower: Sequence[float],
    upper: Sequence[float],
    labeler: Optional[Labeler] = None,
    payload_dim: int = 0,
    payload_bound: float = 1.0,
) -> AdversaryStrategy:
    """IID uniform draws on an axis-aligned box (the trivial class member)."""
    lo = np.asarray(lower, dtype=np.float64)
    hi = np.asarray(upper, dtype=np.float64)
    if np.any(hi <= lo):
        raise ValueError("box must have positive side lengths")
    B = max(float(np.max(np.abs(lo))), float(np.max(np.abs(hi))), payload_bound)
    cls = SmoothnessClass(
        kind="directional",
        context_dim=lo.size,
        sup_bound_B=B,
        sigma_dir=_uniform_box_sigma_dir(lo, hi),
    )

    def policy(history: RunHistory, rng: np.random.Generator) -> np.ndarray:
        x = lo + rng.random(lo.size) * (hi - lo)
        return _append_payload(x, labeler, rng)

    return AdversaryStrategy(
        "uniform_box", cls, policy, payload_dim=payload_dim, rng_stream=1
    )


def _clamp_window_center(
    m: np.ndarray, lo: np.ndarray, hi: np.ndarray, width: float
) -> np.ndarray:
    # keep the whole noise window inside the box so the conditional law stays
    # exactly uniform (clipping samples would create boundary atoms)
    return np.clip(m, lo + width / 2.0, hi - width / 2.0)


def mean_shift_strategy(
    lower: Sequence[float],
    upper: Sequence[float],
    width: float,
    mean_policy: Optional[Callable[[RunHistory], np.ndarray]] = None,
    labeler: Optional[Labeler] = None,
    payload_dim: int = 0,
    payload_bound: float = 1.0,
) -> AdversaryStrategy:
    """Adaptive mean plus uniform noise of the given window width.

    The default mean policy mirrors the previous context around the box
    center, a simple adversarial "jump" pattern.
    """
    lo = np.asarray(lower, dtype=np.float64)
    hi = np.asarray(upper, dtype=np.float64)
    if width <= 0 or np.any(width > (hi - lo)):
        raise ValueError("noise width must be positive and fit inside the box")
    center = 0.5 * (lo + hi)
    B = max(float(np.max(np.abs(lo))), float(np.max(np.abs(hi))), payload_bound)
    cls = SmoothnessClass(
        kind="directional",
        context_dim=lo.size,
        sup_bound_B=B,
        sigma_dir=float(width / math.sqrt(lo.size)),
    )

    def default_mean(history: RunHistory) -> np.ndarray:
        prev = history.last_context()
        if prev is None:
            return center
        return 2.0 * center - prev[: lo.size]

    mean_fn = mean_policy if mean_policy is not None else default_mean

    def policy(history: RunHistory, rng: np.random.Generator) -> np.ndarray:
        m = _clamp_window_center(np.asarray(mean_fn(history)), lo, hi, width)
        x = m + width * (rng.random(lo.size) - 0.5)
        return _append_payload(x, labeler, rng)

    return AdversaryStrategy(
        "mean_shift", cls, policy, payload_dim=payload_dim, rng_stream=2
    )


def greedy_smoothed_strategy(
    lower: Sequence[float],
    upper: Sequence[float],
    width: float,
    loss_probe: Callable[[np.ndarray, np.ndarray], np.ndarray],
    default_theta: np.ndarray,
    grid_per_dim: int = 17,
    labeler: Optional[Labeler] = None,
    payload_dim: int = 0,
    payload_bound: float = 1.0,
) -> AdversaryStrategy:
    """Worst-case-greedy mean, then smoothed by a uniform window.

    `loss_probe(theta, x_grid)` returns the learner's expected loss at each
    probe context for the given parameter vector; the mean is placed on the
    argmax probe (first index on ties).
    """
    lo = np.asarray(lower, dtype=np.float64)
    hi = np.asarray(upper, dtype=np.float64)
    if width <= 0 or np.any(width > (hi - lo)):
        raise ValueError("noise width must be positive and fit inside the box")
    axes = [np.linspace(lo[i], hi[i], grid_per_dim) for i in range(lo.size)]
    mesh = np.meshgrid(*axes, indexing="ij")
    x_grid = np.stack([m.ravel() for m in mesh], axis=1)
    B = max(float(np.max(np.abs(lo))), float(np.max(np.abs(hi))), payload_bound)
    cls = SmoothnessClass(
        kind="directional",
        context_dim=lo.size,
        sup_bound_B=B,
        sigma_dir=float(width / math.sqrt(lo.size)),
    )
    default_theta = np.asarray(default_theta, dtype=np.float64)

    def policy(history: RunHistory, rng: np.random.Generator) -> np.ndarray:
        theta = history.last_theta()
        if theta is None:
            theta = default_theta
        losses = np.asarray(loss_probe(theta, x_grid))
        m = _clamp_window_center(x_grid[int(np.argmax(losses))], lo, hi, width)
        x = m + width * (rng.random(lo.size) - 0.5)
        return _append_payload(x, labeler, rng)

    return AdversaryStrategy(
        "greedy_smoothed", cls, policy, payload_dim=payload_dim, rng_stream=3
    )


def make_point_mass_strategy(z0: Sequence[float], declared: SmoothnessClass) -> AdversaryStrategy:
    """A point mass is incompatible with every smoothness class; building one
    under a smooth declaration is rejected immediately."""
    raise SmoothnessContractError(
        "a point-mass strategy cannot be a member of any "
        f"{declared.kind!r} smoothness class"
    )


# ---------------------------------------------------------------------------
# empirical smoothness estimators (diagnostics only)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DirectionalSmoothnessEstimate:
    sigma_dir: float
    bin_width: float
    degenerate: bool
    worst_direction: Optional[np.ndarray] = None


def _as_matrix(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        return np.atleast_2d(samples.astype(np.float64))
    rows = [s.x if isinstance(s, ContextSample) else np.asarray(s) for s in samples]
    return np.atleast_2d(np.asarray(rows, dtype=np.float64))


def estimate_directional_smoothness(
    samples,
    n_directions: int = 32,
    n_bins: Optional[int] = None,
    directions: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> DirectionalSmoothnessEstimate:
    """Histogram estimate of the inverse worst-direction density sup.

    Projects the sample onto unit directions (random ones plus the
    coordinate axes unless an explicit set is given), takes the max
    histogram density over directions, and inverts it.
    """
    xs = _as_matrix(samples)
    n, d = xs.shape
    if n < 1000:
        raise ValueError("need at least 1000 samples for a stable estimate")
    if np.all(xs == xs[0]):
        return DirectionalSmoothnessEstimate(0.0, 0.0, degenerate=True)
    if directions is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        raw = rng.standard_normal((n_directions, d))
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        directions = np.vstack([np.eye(d), raw])
    else:
        directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    if n_bins is None:
        n_bins = int(math.ceil(n ** (1.0 / 3.0)))

    worst_density = 0.0
    worst_dir = None
    worst_width = 0.0
    for w in directions:
        proj = xs @ w
        lo, hi = float(np.min(proj)), float(np.max(proj))
        if hi == lo:
            return DirectionalSmoothnessEstimate(0.0, 0.0, True, w.copy())
        counts, edges = np.histogram(proj, bins=n_bins, range=(lo, hi))
        width = edges[1] - edges[0]
        density = float(np.max(counts)) / (n * width)
        if density > worst_density:
            worst_density, worst_dir, worst_width = density, w.copy(), float(width)
    return DirectionalSmoothnessEstimate(
        1.0 / worst_density, worst_width, False, worst_dir
    )


@dataclass(frozen=True)
class PolynomialSmoothnessEstimate:
    sigma_poly: float
    degenerate: bool
    worst_epsilon: float = 0.0
    worst_poly_index: int = -1


def estimate_polynomial_smoothness(
    samples,
    degree_r: int,
    test_polynomials: Sequence[np.ndarray],
    epsilon_grid: Sequence[float],
) -> PolynomialSmoothnessEstimate:
    """Estimate the anti-concentration scale of degree-r polynomials.

    For each test polynomial f (top-degree coefficient norm must be 1) and
    each epsilon, finds the densest value window of half-width epsilon via a
    sorted sweep, and returns the minimum of eps**(1/r) / P_hat over all
    (f, a, eps); the shift a is optimized exactly by the sweep.
    """
    xs = _as_matrix(samples)
    n, d = xs.shape
    if np.all(xs == xs[0]):
        return PolynomialSmoothnessEstimate(0.0, degenerate=True)
    if not epsilon_grid:
        raise ValueError("epsilon_grid must be nonempty")
    best = math.inf
    worst_eps, worst_idx = 0.0, -1
    for idx, coeffs in enumerate(test_polynomials):
        coeffs = np.asarray(coeffs, dtype=np.float64)
        top = coeff_top_norm(coeffs, d, degree_r)
        if abs(top - 1.0) > 1e-9:
            raise ValueError(
                f"test polynomial {idx} has top-degree norm {top:.12g}, expected 1"
            )
        vals = np.sort(poly_eval(coeffs, xs, d, degree_r))
        for eps in epsilon_grid:
            if eps <= 0:
                raise ValueError("epsilons must be positive")
            # densest interval of length 2*eps starts at some sample value
            right = np.searchsorted(vals, vals + 2.0 * eps, side="right")
            p_hat = float(np.max(right - np.arange(n))) / n
            ratio = eps ** (1.0 / degree_r) / p_hat
            if ratio < best:
                best, worst_eps, worst_idx = ratio, float(eps), idx
    return PolynomialSmoothnessEstimate(best, False, worst_eps, worst_idx)
