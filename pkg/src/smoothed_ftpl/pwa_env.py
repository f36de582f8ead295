"""Piecewise-continuous loss environments.

Mode selection comes in two flavors: a pairwise sign tournament (winner =
smallest index with the most wins, a tied match pays both players) and a
plain argmax over per-mode scores with a declared margin between boundary
weight blocks.  Boundaries are affine in (z, 1) through an odd increasing
link, or polynomials of bounded degree with unit top-degree coefficient
norm.  The induced pseudo-metric charges 2 for a mode disagreement plus
the largest per-mode continuous gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .core import (
    ContextSample,
    LossSpec,
    ParamPoint,
    ParamSpace,
    PseudoMetricSpec,
    canonicalize,
)
from .mcstats import wilson_interval
from .polynomials import coeff_top_norm, monomial_matrix, n_monomials
from .smoothing import AdversaryStrategy, RunHistory, SmoothnessClass, sample_context


# ---------------------------------------------------------------------------
# links and boundary specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinkFunction:
    """Odd, strictly increasing scalar link with slope in [slope_min, slope_max]."""

    fn: Callable[[np.ndarray], np.ndarray]
    slope_min: float = 1.0
    slope_max: float = 1.0
    name: str = "identity"

    def __post_init__(self):
        if not (0 < self.slope_min <= self.slope_max):
            raise ValueError("need 0 < slope_min <= slope_max")
        probe = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
        vals = np.asarray(self.fn(probe), dtype=np.float64)
        if abs(vals[2]) > 1e-12:
            raise ValueError("link must vanish at 0")
        if np.max(np.abs(vals + vals[::-1])) > 1e-9:
            raise ValueError("link must be odd")
        if not np.all(np.diff(vals) > 0):
            raise ValueError("link must be strictly increasing")


IDENTITY_LINK = LinkFunction(lambda t: t)


def pair_index(K: int) -> Tuple[Tuple[int, int], ...]:
    """Ordered (k, k') pairs with k < k', lexicographic."""
    return tuple((i, j) for i in range(K) for j in range(i + 1, K))


@dataclass(frozen=True)
class TournamentBoundarySpec:
    """Layout and scoring of the pairwise-tournament mode selector.

    The discrete block theta_d concatenates one weight block per (k, k')
    pair, k < k': affine boundaries use (d+1)-vectors scoring <w, (z, 1)>,
    polynomial ones use dense degree<=r coefficient vectors over z.  The
    reversed pair scores the negation.
    """

    K: int
    context_dim: int
    boundary_kind: str = "affine"  # "affine" | "polynomial"
    degree_r: int = 1
    link: LinkFunction = IDENTITY_LINK

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.boundary_kind not in ("affine", "polynomial"):
            raise ValueError(f"unknown boundary kind {self.boundary_kind!r}")
        if self.boundary_kind == "polynomial" and self.degree_r < 1:
            raise ValueError("polynomial boundaries need degree_r >= 1")

    @property
    def n_pairs(self) -> int:
        return self.K * (self.K - 1) // 2

    @property
    def block_dim(self) -> int:
        if self.boundary_kind == "affine":
            return self.context_dim + 1
        return n_monomials(self.context_dim, self.degree_r)

    @property
    def theta_d_dim(self) -> int:
        return self.n_pairs * self.block_dim

    def pair_blocks(self, theta_d: np.ndarray) -> np.ndarray:
        theta_d = np.asarray(theta_d, dtype=np.float64)
        if theta_d.size != self.theta_d_dim:
            raise ValueError(
                f"theta_d has size {theta_d.size}, expected {self.theta_d_dim}"
            )
        return theta_d.reshape(self.n_pairs, self.block_dim)

    def raw_scores(self, theta_d: np.ndarray, zs: np.ndarray) -> np.ndarray:
        """Pre-link pairwise scores: (N, n_pairs)."""
        zs = np.atleast_2d(np.asarray(zs, dtype=np.float64))
        w = self.pair_blocks(theta_d)
        if self.boundary_kind == "affine":
            feats = np.concatenate([zs, np.ones((zs.shape[0], 1))], axis=1)
        else:
            feats = monomial_matrix(zs, self.context_dim, self.degree_r)
        return feats @ w.T

    def validate_theta_d(self, theta_d: np.ndarray, atol: float = 1e-9) -> None:
        """Check the unit-norm convention on each pair block."""
        blocks = self.pair_blocks(theta_d)
        for i, b in enumerate(blocks):
            norm = (
                float(np.linalg.norm(b))
                if self.boundary_kind == "affine"
                else coeff_top_norm(b, self.context_dim, self.degree_r)
            )
            if abs(norm - 1.0) > atol:
                raise ValueError(f"pair block {i} has norm {norm:.12g}, expected 1")


@dataclass(frozen=True)
class ArgmaxBoundarySpec:
    """Per-mode affine scores with a declared margin between weight blocks."""

    K: int
    context_dim: int
    margin_gamma: float = 0.0
    link: LinkFunction = IDENTITY_LINK

    @property
    def block_dim(self) -> int:
        return self.context_dim + 1

    @property
    def theta_d_dim(self) -> int:
        return self.K * self.block_dim

    def mode_blocks(self, theta_d: np.ndarray) -> np.ndarray:
        theta_d = np.asarray(theta_d, dtype=np.float64)
        if theta_d.size != self.theta_d_dim:
            raise ValueError(
                f"theta_d has size {theta_d.size}, expected {self.theta_d_dim}"
            )
        return theta_d.reshape(self.K, self.block_dim)

    def raw_scores(self, theta_d: np.ndarray, zs: np.ndarray) -> np.ndarray:
        zs = np.atleast_2d(np.asarray(zs, dtype=np.float64))
        w = self.mode_blocks(theta_d)
        feats = np.concatenate([zs, np.ones((zs.shape[0], 1))], axis=1)
        return feats @ w.T


BoundarySpec = Union[TournamentBoundarySpec, ArgmaxBoundarySpec]


# ---------------------------------------------------------------------------
# mode selection
# ---------------------------------------------------------------------------


def modes_tournament_batch(
    spec: TournamentBoundarySpec, theta_d: np.ndarray, zs: np.ndarray
) -> np.ndarray:
    """Winning mode for each context row; ties go to the smallest index."""
    if spec.K == 1:
        return np.zeros(np.atleast_2d(zs).shape[0], dtype=np.intp)
    scores = canonicalize(spec.raw_scores(theta_d, zs))
    n = scores.shape[0]
    wins = np.zeros((n, spec.K), dtype=np.intp)
    for p, (i, j) in enumerate(pair_index(spec.K)):
        s = scores[:, p]
        # a drawn match (s == 0) pays a win to both players
        wins[:, i] += s >= 0.0
        wins[:, j] += -s >= 0.0
    return np.argmax(wins, axis=1)


def mode_tournament(
    spec: TournamentBoundarySpec, theta_d: np.ndarray, z: Union[ContextSample, np.ndarray]
) -> int:
    zvec = z.z if isinstance(z, ContextSample) else np.asarray(z)
    return int(modes_tournament_batch(spec, theta_d, zvec[None, :])[0])


def modes_argmax_batch(
    spec: ArgmaxBoundarySpec, theta_d: np.ndarray, zs: np.ndarray
) -> np.ndarray:
    """Argmax mode per context row on the raw scores (the increasing link
    cannot change the argmax); ties go to the smallest index."""
    scores = canonicalize(spec.raw_scores(theta_d, zs))
    return np.argmax(scores, axis=1)


def mode_argmax(
    spec: ArgmaxBoundarySpec, theta_d: np.ndarray, z: Union[ContextSample, np.ndarray]
) -> int:
    zvec = z.z if isinstance(z, ContextSample) else np.asarray(z)
    return int(modes_argmax_batch(spec, theta_d, zvec[None, :])[0])


def select_modes(
    boundary: BoundarySpec, theta_d: np.ndarray, zs: np.ndarray
) -> np.ndarray:
    if isinstance(boundary, TournamentBoundarySpec):
        return modes_tournament_batch(boundary, theta_d, zs)
    return modes_argmax_batch(boundary, theta_d, zs)


# ---------------------------------------------------------------------------
# mode losses
# ---------------------------------------------------------------------------


class ModeLoss:
    """Per-mode continuous losses g_k, 1-Lipschitz in the block's l1 norm."""

    lipschitz: float = 1.0

    def eval_many(self, k: int, theta_c_k: np.ndarray, zs: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass
class ConstantModeLoss(ModeLoss):
    """g_k identically equal to a per-mode constant (diagnostics)."""

    values: Sequence[float]
    lipschitz: float = 0.0

    def eval_many(self, k, theta_c_k, zs):
        return np.full(np.atleast_2d(zs).shape[0], float(self.values[k]))


@dataclass
class TrackingModeLoss(ModeLoss):
    """g_k = clip(scale * sum_j |theta_j - t_kj(z)|, 0, 1) for per-mode
    affine targets t_k(z) = T_k z + b_k; Lipschitz constant is `scale`."""

    target_mats: Sequence[np.ndarray]  # per mode, (c_dim, context_dim)
    target_offsets: Sequence[np.ndarray]  # per mode, (c_dim,)
    scale: float = 0.5

    def __post_init__(self):
        if not (0 < self.scale <= 1.0):
            raise ValueError("scale must lie in (0, 1] to keep g_k 1-Lipschitz")
        self.lipschitz = self.scale

    def eval_many(self, k, theta_c_k, zs):
        zs = np.atleast_2d(zs)
        targets = zs @ np.asarray(self.target_mats[k]).T + self.target_offsets[k]
        gaps = np.sum(np.abs(theta_c_k[None, :] - targets), axis=1)
        return np.clip(self.scale * gaps, 0.0, 1.0)


@dataclass
class ClippedSquaredModeLoss(ModeLoss):
    """Regression loss min(scale * ||y - W_k x||^2, 1).

    theta_c^(k) is vec(W_k) with W_k of shape (y_dim, x_dim); the context
    carries x then y.  `scale` must make the loss 1-Lipschitz on the
    declared boxes (see `regression_scale_bound`).
    """

    x_dim: int
    y_dim: int
    scale: float = 1.0
    lipschitz: float = 1.0

    def eval_many(self, k, theta_c_k, zs):
        zs = np.atleast_2d(zs)
        x = zs[:, : self.x_dim]
        y = zs[:, self.x_dim : self.x_dim + self.y_dim]
        W = theta_c_k.reshape(self.y_dim, self.x_dim)
        resid = y - x @ W.T
        return np.minimum(self.scale * np.sum(resid**2, axis=1), 1.0)


def regression_scale_bound(x_max: float, y_max: float, w_max: float, x_dim: int) -> float:
    """Largest scale keeping the clipped squared loss 1-Lipschitz in vec(W)."""
    resid_max = y_max + w_max * x_dim * x_max
    return 1.0 / (2.0 * resid_max * x_max)


@dataclass
class CallbackModeLoss(ModeLoss):
    """User-supplied g_k with a declared Lipschitz constant."""

    fn: Callable[[int, np.ndarray, np.ndarray], np.ndarray]
    lipschitz: float = 1.0

    def eval_many(self, k, theta_c_k, zs):
        return np.asarray(self.fn(k, theta_c_k, np.atleast_2d(zs)), dtype=np.float64)


# ---------------------------------------------------------------------------
# the piecewise loss spec
# ---------------------------------------------------------------------------


@dataclass
class PiecewiseLossSpec(LossSpec):
    """Piecewise-continuous loss: pick a mode from theta_d and z, then pay
    the mode's continuous loss at that mode's theta_c block."""

    boundary: BoundarySpec
    mode_losses: ModeLoss
    space: ParamSpace
    normalize_discrete: bool = False
    name: str = "piecewise"
    metric: Optional[PseudoMetricSpec] = field(default=None)

    @property
    def K(self) -> int:
        return self.boundary.K

    @property
    def c_dim_per_mode(self) -> int:
        return self.space.dim_continuous // self.K

    def split(self, coords: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        dc = self.space.dim_continuous
        return coords[:dc], coords[dc:]

    def continuous_blocks(self, coords: np.ndarray) -> np.ndarray:
        theta_c, _ = self.split(coords)
        return theta_c.reshape(self.K, self.c_dim_per_mode)

    def canonical_coords(self, coords: np.ndarray) -> np.ndarray:
        """Renormalize discrete weight blocks to the unit convention (when
        the environment declares it), then clip back into the box."""
        if not self.normalize_discrete:
            return canonicalize(coords)
        theta_c, theta_d = self.split(np.asarray(coords, dtype=np.float64))
        bnd = self.boundary
        if isinstance(bnd, TournamentBoundarySpec):
            blocks = bnd.pair_blocks(theta_d).copy()
            if bnd.boundary_kind == "affine":
                norms = np.linalg.norm(blocks, axis=1)
            else:
                from .polynomials import top_degree_slice

                sl = top_degree_slice(bnd.context_dim, bnd.degree_r)
                norms = np.linalg.norm(blocks[:, sl], axis=1)
        else:
            blocks = bnd.mode_blocks(theta_d).copy()
            norms = np.linalg.norm(blocks, axis=1)
        safe = norms > 1e-12
        blocks[safe] /= norms[safe, None]
        out = np.concatenate([theta_c, blocks.ravel()])
        out = np.clip(out, self.space.box_lower, self.space.box_upper)
        return canonicalize(out)

    # -- loss evaluation ----------------------------------------------------

    def eval(self, theta: ParamPoint, z: ContextSample) -> float:
        return float(self.eval_batch(theta.coords[None, :], z.z[None, :])[0, 0])

    def eval_batch(self, thetas: np.ndarray, zs: np.ndarray) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        zs = np.atleast_2d(np.asarray(zs, dtype=np.float64))
        out = np.empty((thetas.shape[0], zs.shape[0]))
        for p, coords in enumerate(thetas):
            theta_c, theta_d = self.split(coords)
            modes = select_modes(self.boundary, theta_d, zs)
            blocks = self.continuous_blocks(coords)
            row = np.empty(zs.shape[0])
            for k in range(self.K):
                mask = modes == k
                if np.any(mask):
                    row[mask] = self.mode_losses.eval_many(k, blocks[k], zs[mask])
            out[p] = row
        return np.clip(out, 0.0, 1.0)

    def modes_of(self, coords: np.ndarray, zs: np.ndarray) -> np.ndarray:
        _, theta_d = self.split(np.asarray(coords, dtype=np.float64))
        return select_modes(self.boundary, theta_d, zs)


def eval_piecewise_loss(
    spec: PiecewiseLossSpec, theta: ParamPoint, z: ContextSample
) -> float:
    return spec.eval(theta, z)


# ---------------------------------------------------------------------------
# the pseudo-metric and its constants
# ---------------------------------------------------------------------------


def rho_pwa(
    spec: PiecewiseLossSpec,
    a: Union[ParamPoint, np.ndarray],
    b: Union[ParamPoint, np.ndarray],
    z: Union[ContextSample, np.ndarray],
) -> float:
    """2 * [modes differ] + max over modes of the continuous-block l1 gap."""
    ac = a.coords if isinstance(a, ParamPoint) else np.asarray(a, dtype=np.float64)
    bc = b.coords if isinstance(b, ParamPoint) else np.asarray(b, dtype=np.float64)
    zv = z.z if isinstance(z, ContextSample) else np.asarray(z, dtype=np.float64)
    return float(rho_pwa_batch(spec, ac, bc, zv[None, :])[0])


def rho_pwa_batch(
    spec: PiecewiseLossSpec, a_coords: np.ndarray, b_coords: np.ndarray, zs: np.ndarray
) -> np.ndarray:
    zs = np.atleast_2d(zs)
    modes_a = spec.modes_of(a_coords, zs)
    modes_b = spec.modes_of(b_coords, zs)
    gap = float(
        np.max(
            np.sum(
                np.abs(spec.continuous_blocks(a_coords) - spec.continuous_blocks(b_coords)),
                axis=1,
            )
        )
    )
    return 2.0 * (modes_a != modes_b) + gap


def pwa_rho_diameter(spec: PiecewiseLossSpec) -> float:
    """2 plus the largest per-mode continuous-block l1 diameter."""
    dc = spec.space.dim_continuous
    ranges = spec.space.box_upper[:dc] - spec.space.box_lower[:dc]
    if dc == 0:
        return 2.0
    per_mode = ranges.reshape(spec.K, spec.c_dim_per_mode).sum(axis=1)
    return 2.0 + float(np.max(per_mode))


def pseudo_isometry_constants(
    spec: PiecewiseLossSpec, smoothness: SmoothnessClass
) -> Tuple[float, float]:
    """Expected-contraction constants (alpha, beta) of rho for this
    environment under the declared smoothness class."""
    bnd = spec.boundary
    B = smoothness.sup_bound_B
    if isinstance(bnd, TournamentBoundarySpec):
        if bnd.boundary_kind == "affine":
            if smoothness.kind != "directional":
                raise ValueError("affine boundaries pair with directional smoothness")
            a, A = bnd.link.slope_min, bnd.link.slope_max
            alpha = 2.0 * A * max(B, 1.0) / (a * smoothness.sigma_dir)
            return (alpha, 1.0)
        if smoothness.kind != "polynomial":
            raise ValueError("polynomial boundaries pair with polynomial smoothness")
        if smoothness.degree_r != bnd.degree_r:
            raise ValueError("smoothness degree must match the boundary degree")
        D = spec.space.l1_diameter_D
        alpha = 2.0 * B * D / smoothness.sigma_poly
        return (alpha, 1.0 / bnd.degree_r)
    # argmax boundaries need the margin
    if smoothness.kind != "directional":
        raise ValueError("margin boundaries pair with directional smoothness")
    gamma = bnd.margin_gamma
    if gamma <= 0:
        raise ValueError("argmax boundary requires a positive declared margin")
    a, A = bnd.link.slope_min, bnd.link.slope_max
    alpha = 4.0 * A * B / (a * gamma * smoothness.sigma_dir)
    return (alpha, 1.0)


def metric_for(spec: PiecewiseLossSpec, smoothness: SmoothnessClass) -> PseudoMetricSpec:
    alpha, beta = pseudo_isometry_constants(spec, smoothness)
    return PseudoMetricSpec(
        eval_fn=lambda a, b, z: rho_pwa(spec, a, b, z),
        diameter_bound_Drho=pwa_rho_diameter(spec),
        iso_alpha=alpha,
        iso_beta=beta,
        name=f"rho_{spec.name}",
        eval_batch_fn=lambda ac, bc, zs: rho_pwa_batch(spec, ac, bc, zs),
    )


def margin_check(spec: Union[PiecewiseLossSpec, ArgmaxBoundarySpec], theta_d) -> float:
    """Realized margin: min pairwise Euclidean gap of the leading-d weight
    blocks (the constant coordinate does not count).  +inf for K = 1."""
    bnd = spec.boundary if isinstance(spec, PiecewiseLossSpec) else spec
    if not isinstance(bnd, ArgmaxBoundarySpec):
        raise ValueError("margin_check applies to argmax boundaries")
    w = bnd.mode_blocks(np.asarray(theta_d, dtype=np.float64))[:, : bnd.context_dim]
    if bnd.K < 2:
        return math.inf
    best = math.inf
    for i in range(bnd.K):
        for j in range(i + 1, bnd.K):
            best = min(best, float(np.linalg.norm(w[i] - w[j])))
    return best


@dataclass(frozen=True)
class FlipRateEstimate:
    estimate: float
    ci_low: float
    ci_high: float
    n_samples: int


def mode_flip_rate(
    spec: PiecewiseLossSpec,
    theta_d: np.ndarray,
    theta_d_other: np.ndarray,
    strategy: AdversaryStrategy,
    n_mc: int,
    rng: np.random.Generator,
) -> FlipRateEstimate:
    """Monte Carlo probability that the two discrete blocks select different
    modes, with a 95% Wilson interval."""
    theta_d = np.asarray(theta_d, dtype=np.float64)
    theta_d_other = np.asarray(theta_d_other, dtype=np.float64)
    if np.array_equal(theta_d, theta_d_other):
        return FlipRateEstimate(0.0, 0.0, 0.0, n_mc)
    history = RunHistory()
    zs = np.stack([sample_context(strategy, history, rng).z for _ in range(n_mc)])
    zs = zs[:, : spec.boundary.context_dim]
    m1 = select_modes(spec.boundary, theta_d, zs)
    m2 = select_modes(spec.boundary, theta_d_other, zs)
    flips = int(np.sum(m1 != m2))
    lo, hi = wilson_interval(flips, n_mc)
    return FlipRateEstimate(flips / n_mc, lo, hi, n_mc)


# ---------------------------------------------------------------------------
# the 1-d threshold environment
# ---------------------------------------------------------------------------


@dataclass
class ThresholdLossSpec(LossSpec):
    """Sign agreement loss for 1-d thresholds: pay 1 when the label differs
    from sign(x - theta); sign(0) counts as +1."""

    space: ParamSpace
    name: str = "threshold"
    metric: Optional[PseudoMetricSpec] = field(default=None)

    def eval(self, theta: ParamPoint, z: ContextSample) -> float:
        return float(self.eval_batch(theta.coords[None, :], z.z[None, :])[0, 0])

    def eval_batch(self, thetas: np.ndarray, zs: np.ndarray) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        zs = np.atleast_2d(np.asarray(zs, dtype=np.float64))
        x, y = zs[:, 0], zs[:, 1]
        preds = np.where(x[None, :] >= thetas[:, :1], 1.0, -1.0)
        return (preds != y[None, :]).astype(np.float64)

    def predictions(self, thetas: np.ndarray, xs: np.ndarray) -> np.ndarray:
        thetas = np.atleast_1d(np.asarray(thetas, dtype=np.float64))
        return np.where(xs[None, :] >= thetas[:, None], 1.0, -1.0)


def rho_threshold_batch(
    spec: ThresholdLossSpec, a_coords: np.ndarray, b_coords: np.ndarray, zs: np.ndarray
) -> np.ndarray:
    zs = np.atleast_2d(zs)
    x = zs[:, 0]
    pa = x >= float(np.asarray(a_coords).ravel()[0])
    pb = x >= float(np.asarray(b_coords).ravel()[0])
    return 2.0 * (pa != pb)


def threshold_environment(
    lo: float = 0.0, hi: float = 1.0, sigma_dir: float = 1.0
) -> ThresholdLossSpec:
    """Threshold loss on [lo, hi] with its flip pseudo-metric attached."""
    space = ParamSpace(np.array([lo]), np.array([hi]), dim_continuous=0, dim_discrete=1)
    spec = ThresholdLossSpec(space)
    spec.metric = PseudoMetricSpec(
        eval_fn=lambda a, b, z: float(
            rho_threshold_batch(spec, a.coords, b.coords, z.z[None, :])[0]
        ),
        diameter_bound_Drho=2.0,
        iso_alpha=2.0 / sigma_dir,
        iso_beta=1.0,
        name="rho_threshold",
        eval_batch_fn=lambda ac, bc, zs: rho_threshold_batch(spec, ac, bc, zs),
    )
    return spec


def threshold_labeler(
    theta_star: float, flip_prob: float
) -> Callable[[np.ndarray, np.random.Generator], np.ndarray]:
    """Labels sign(x - theta_star), flipped with the given probability."""

    def labeler(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        y = 1.0 if x[0] >= theta_star else -1.0
        if rng.random() < flip_prob:
            y = -y
        return np.array([y])

    return labeler


# ---------------------------------------------------------------------------
# ready-made tournament environments
# ---------------------------------------------------------------------------


def affine_tournament_space(
    K: int, context_dim: int, c_dim_per_mode: int, c_lo: float = 0.0, c_hi: float = 1.0
) -> ParamSpace:
    boundary = TournamentBoundarySpec(K=K, context_dim=context_dim)
    dc = K * c_dim_per_mode
    dd = boundary.theta_d_dim
    lo = np.concatenate([np.full(dc, c_lo), np.full(dd, -1.0)])
    hi = np.concatenate([np.full(dc, c_hi), np.full(dd, 1.0)])
    return ParamSpace(lo, hi, dim_continuous=dc, dim_discrete=dd)


def affine_tournament_environment(
    K: int,
    context_dim: int,
    c_dim_per_mode: int = 1,
    link: LinkFunction = IDENTITY_LINK,
    mode_losses: Optional[ModeLoss] = None,
    scale: float = 0.5,
    normalize_discrete: bool = True,
    rng: Optional[np.random.Generator] = None,
) -> PiecewiseLossSpec:
    """Tournament environment with affine boundaries; the default mode loss
    tracks per-mode affine targets of the context."""
    boundary = TournamentBoundarySpec(K=K, context_dim=context_dim, link=link)
    space = affine_tournament_space(K, context_dim, c_dim_per_mode)
    if mode_losses is None:
        rng = rng if rng is not None else np.random.default_rng(7)
        mats = [
            rng.uniform(-0.5, 0.5, size=(c_dim_per_mode, context_dim)) for _ in range(K)
        ]
        offs = [rng.uniform(0.25, 0.75, size=c_dim_per_mode) for _ in range(K)]
        mode_losses = TrackingModeLoss(mats, offs, scale=scale)
    return PiecewiseLossSpec(
        boundary=boundary,
        mode_losses=mode_losses,
        space=space,
        normalize_discrete=normalize_discrete,
        name=f"pwa_tournament_K{K}d{context_dim}",
    )


def random_unit_pair_blocks(
    spec: TournamentBoundarySpec, rng: np.random.Generator, spread: float = 0.0
) -> Tuple[np.ndarray, np.ndarray]:
    """A random unit-norm theta_d and a nearby renormalized partner."""
    w = rng.standard_normal((spec.n_pairs, spec.block_dim))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    w2 = w + spread * rng.standard_normal(w.shape)
    w2 /= np.linalg.norm(w2, axis=1, keepdims=True)
    return w.ravel(), w2.ravel()
