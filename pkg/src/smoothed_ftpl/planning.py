"""Smoothed open-loop planning through piecewise (hybrid) dynamics.

An episode context packs an initial state and per-step input/state noises;
the learner's decision is a plan of H nominal inputs.  Realized inputs add
the input noise, the active mode at each step is the argmax of affine (or
polynomial) boundary scores of (state, input, 1), and the episode pays a
Lipschitz function of the visited state-input pairs, clipped to [0, 1].
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

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
from .polynomials import monomial_matrix
from .smoothing import AdversaryStrategy, SmoothnessClass


class SpecRejectedError(ValueError):
    """Declared constants are contradicted by measurement."""


@dataclass
class HybridSystemSpec:
    """Hybrid dynamics with per-step mode boundaries.

    affine_A[h, k] is (m, m+d) and affine_b[h, k] is (m,): mode-k dynamics
    at step h map v = (x, u) to A v + b (noise added afterwards).
    boundary[h, k] scores mode k at step h; affine boundaries are unit rows
    in R^(m+d+1) applied to (v, 1), polynomial ones are coefficient vectors
    over v with unit top-degree norm.
    """

    H: int
    K: int
    state_dim: int
    input_dim: int
    affine_A: np.ndarray  # (H, K, m, m+d)
    affine_b: np.ndarray  # (H, K, m)
    boundary: np.ndarray  # (H, K, boundary_dim)
    boundary_kind: str = "affine"
    degree_r: int = 1
    margin_gamma: float = 1.0
    lipschitz_L: float = 1.0
    v_bound_D: float = 1.0
    sigma_dir: float = 1.0
    noise_width: float = 0.5
    x1_low: np.ndarray = field(default_factory=lambda: np.zeros(1))
    x1_high: np.ndarray = field(default_factory=lambda: np.zeros(1))
    state_clip: float = 10.0
    plan_low: float = -1.0
    plan_high: float = 1.0
    loss_v: Optional[Callable[[np.ndarray], np.ndarray]] = None  # (..., H, m+d) -> (...)
    name: str = "hybrid"

    @property
    def v_dim(self) -> int:
        return self.state_dim + self.input_dim

    @property
    def plan_dim(self) -> int:
        return self.H * self.input_dim

    def plan_space(self) -> ParamSpace:
        return ParamSpace(
            np.full(self.plan_dim, self.plan_low),
            np.full(self.plan_dim, self.plan_high),
            dim_continuous=self.plan_dim,
            dim_discrete=0,
        )

    def context_dim(self) -> int:
        return self.state_dim + self.H * (self.input_dim + self.state_dim)

    def smoothness(self) -> SmoothnessClass:
        bound = max(
            float(np.max(np.abs(self.x1_low))),
            float(np.max(np.abs(self.x1_high))),
            self.noise_width / 2.0,
        )
        return SmoothnessClass(
            kind="directional",
            context_dim=self.context_dim(),
            sup_bound_B=max(bound, 1e-9),
            sigma_dir=self.sigma_dir,
        )


def pack_planning_context(
    x1: np.ndarray, xis: np.ndarray, etas: np.ndarray
) -> np.ndarray:
    return np.concatenate([np.ravel(x1), np.ravel(xis), np.ravel(etas)])


def unpack_planning_contexts(
    spec: HybridSystemSpec, zs: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    zs = np.atleast_2d(zs)
    m, d, H = spec.state_dim, spec.input_dim, spec.H
    x1 = zs[:, :m]
    xis = zs[:, m : m + H * d].reshape(-1, H, d)
    etas = zs[:, m + H * d :].reshape(-1, H, m)
    return x1, xis, etas


@dataclass(frozen=True)
class TrajectoryRecord:
    xs: np.ndarray  # (H+1, m)
    us: np.ndarray  # (H, d)
    modes: np.ndarray  # (H,)
    xis: np.ndarray
    etas: np.ndarray
    loss_value: float
    clipped: bool

    @property
    def vs(self) -> np.ndarray:
        return np.concatenate([self.xs[:-1], self.us], axis=1)


def _mode_scores(
    spec: HybridSystemSpec, h: int, v_flat: np.ndarray
) -> np.ndarray:
    """Boundary scores at step h for flattened v rows: (N, K)."""
    if spec.boundary_kind == "affine":
        feats = np.concatenate([v_flat, np.ones((v_flat.shape[0], 1))], axis=1)
    else:
        feats = monomial_matrix(v_flat, spec.v_dim, spec.degree_r)
    return feats @ spec.boundary[h].T


def rollout_batch(
    spec: HybridSystemSpec,
    plans: np.ndarray,  # (P, H*d)
    x1: np.ndarray,  # (N, m)
    xis: np.ndarray,  # (N, H, d)
    etas: np.ndarray,  # (N, H, m)
    forced_modes: Optional[np.ndarray] = None,  # (H,) or None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    """Roll P plans against N shared noise realizations.

    Returns (losses (P,N), modes (P,N,H), xs (P,N,H+1,m), clipped_any).
    Mode ties go to the smallest index; states are clipped into the declared
    state box with a flag.
    """
    plans = np.atleast_2d(np.asarray(plans, dtype=np.float64))
    P = plans.shape[0]
    N = x1.shape[0]
    m, d, H, K = spec.state_dim, spec.input_dim, spec.H, spec.K
    plan_mat = plans.reshape(P, H, d)
    x = np.broadcast_to(x1[None, :, :], (P, N, m)).copy()
    xs = np.empty((P, N, H + 1, m))
    xs[:, :, 0] = x
    vs = np.empty((P, N, H, m + d))
    modes = np.empty((P, N, H), dtype=np.intp)
    clipped = False
    for h in range(H):
        u = plan_mat[:, None, h, :] + xis[None, :, h, :]
        v = np.concatenate([x, u], axis=2)
        vs[:, :, h] = v
        v_flat = v.reshape(P * N, m + d)
        if forced_modes is not None:
            mode_flat = np.full(P * N, int(forced_modes[h]), dtype=np.intp)
        else:
            scores = canonicalize(_mode_scores(spec, h, v_flat))
            mode_flat = np.argmax(scores, axis=1)
        modes[:, :, h] = mode_flat.reshape(P, N)
        x_next = np.empty((P * N, m))
        for k in range(K):
            mask = mode_flat == k
            if np.any(mask):
                x_next[mask] = v_flat[mask] @ spec.affine_A[h, k].T + spec.affine_b[h, k]
        x_next = x_next.reshape(P, N, m) + etas[None, :, h, :]
        lo, hi = -spec.state_clip, spec.state_clip
        if np.any(x_next < lo) or np.any(x_next > hi):
            clipped = True
            x_next = np.clip(x_next, lo, hi)
        x = x_next
        xs[:, :, h + 1] = x
    if spec.loss_v is None:
        losses = np.zeros((P, N))
    else:
        losses = np.clip(spec.loss_v(vs), 0.0, 1.0)
    return losses, modes, xs, clipped


def rollout(
    spec: HybridSystemSpec,
    plan: Union[ParamPoint, np.ndarray],
    x1: np.ndarray,
    xis: np.ndarray,
    etas: np.ndarray,
    record_modes: bool = True,
) -> TrajectoryRecord:
    """Single trajectory with state-dependent mode selection."""
    coords = plan.coords if isinstance(plan, ParamPoint) else np.asarray(plan)
    x1 = np.atleast_1d(np.asarray(x1, dtype=np.float64))
    xis = np.asarray(xis, dtype=np.float64).reshape(spec.H, spec.input_dim)
    etas = np.asarray(etas, dtype=np.float64).reshape(spec.H, spec.state_dim)
    if not np.all(np.isfinite(x1)) or not np.all(np.isfinite(xis)):
        raise ValueError("non-finite rollout inputs")
    losses, modes, xs, clipped = rollout_batch(
        spec, coords[None, :], x1[None, :], xis[None], etas[None]
    )
    if not np.all(np.isfinite(xs)):
        raise FloatingPointError("rollout produced non-finite states")
    us = coords.reshape(spec.H, spec.input_dim) + xis
    return TrajectoryRecord(
        xs[0, 0], us, modes[0, 0], xis, etas, float(losses[0, 0]), clipped
    )


def rollout_fixed_modes(
    spec: HybridSystemSpec,
    plan: Union[ParamPoint, np.ndarray],
    x1: np.ndarray,
    xis: np.ndarray,
    etas: np.ndarray,
    modes: Sequence[int],
) -> TrajectoryRecord:
    """Trajectory with the mode sequence forced (the fixed-mode flow map)."""
    coords = plan.coords if isinstance(plan, ParamPoint) else np.asarray(plan)
    x1 = np.atleast_1d(np.asarray(x1, dtype=np.float64))
    xis = np.asarray(xis, dtype=np.float64).reshape(spec.H, spec.input_dim)
    etas = np.asarray(etas, dtype=np.float64).reshape(spec.H, spec.state_dim)
    forced = np.asarray(modes, dtype=np.intp)
    if forced.shape != (spec.H,) or np.any(forced < 0) or np.any(forced >= spec.K):
        raise ValueError("mode sequence must list H valid mode indices")
    losses, out_modes, xs, clipped = rollout_batch(
        spec, coords[None, :], x1[None, :], xis[None], etas[None], forced_modes=forced
    )
    us = coords.reshape(spec.H, spec.input_dim) + xis
    return TrajectoryRecord(
        xs[0, 0], us, out_modes[0, 0], xis, etas, float(losses[0, 0]), clipped
    )


def planning_loss(spec: HybridSystemSpec, traj: TrajectoryRecord) -> float:
    """Episode loss of a rolled trajectory, clipped to [0, 1]."""
    if spec.loss_v is None:
        return 0.0
    return float(np.clip(spec.loss_v(traj.vs[None, ...]), 0.0, 1.0)[0])


# ---------------------------------------------------------------------------
# loss spec + pseudo-metric over plans
# ---------------------------------------------------------------------------


@dataclass
class PlanningLossSpec(LossSpec):
    """Episode loss as a function of the plan; contexts are packed noises."""

    system: HybridSystemSpec
    metric: Optional[PseudoMetricSpec] = field(default=None)

    @property
    def space(self) -> ParamSpace:
        return self.system.plan_space()

    def eval(self, theta: ParamPoint, z: ContextSample) -> float:
        return float(self.eval_batch(theta.coords[None, :], z.z[None, :])[0, 0])

    def eval_batch(self, thetas: np.ndarray, zs: np.ndarray) -> np.ndarray:
        x1, xis, etas = unpack_planning_contexts(self.system, zs)
        losses, _, _, _ = rollout_batch(self.system, thetas, x1, xis, etas)
        return losses


def rho_planning_batch(
    spec: HybridSystemSpec, a_coords: np.ndarray, b_coords: np.ndarray, zs: np.ndarray
) -> np.ndarray:
    """Plan gap plus summed state gaps of coupled (shared-noise) rollouts."""
    x1, xis, etas = unpack_planning_contexts(spec, zs)
    plans = np.stack([np.ravel(a_coords), np.ravel(b_coords)])
    _, _, xs, _ = rollout_batch(spec, plans, x1, xis, etas)
    # states x_1..x_H enter the loss; x_{H+1} does not
    gap = np.sum(np.abs(xs[0, :, : spec.H] - xs[1, :, : spec.H]), axis=(1, 2))
    return gap + float(np.sum(np.abs(plans[0] - plans[1])))


def planning_environment_metric(spec: HybridSystemSpec) -> PseudoMetricSpec:
    alpha = (
        6.0
        * spec.v_bound_D
        * spec.H**2
        * spec.K**2
        * spec.lipschitz_L
        / (spec.margin_gamma * spec.sigma_dir)
    )
    plan_diam = spec.plan_dim * (spec.plan_high - spec.plan_low)
    d_rho = plan_diam + 2.0 * spec.v_bound_D * spec.H

    def eval_fn(a: ParamPoint, b: ParamPoint, z: ContextSample) -> float:
        return float(rho_planning_batch(spec, a.coords, b.coords, z.z[None, :])[0])

    return PseudoMetricSpec(
        eval_fn=eval_fn,
        diameter_bound_Drho=float(d_rho),
        iso_alpha=float(alpha),
        iso_beta=1.0,
        name=f"rho_planning_{spec.name}",
        eval_batch_fn=lambda ac, bc, zs: rho_planning_batch(spec, ac, bc, zs),
    )


def planning_adversary(spec: HybridSystemSpec, rng_stream: int = 1) -> AdversaryStrategy:
    """Default scenario: fixed system, fresh smooth noises every episode."""
    cls = spec.smoothness()
    m, d, H = spec.state_dim, spec.input_dim, spec.H
    w = spec.noise_width

    def policy(history, rng: np.random.Generator) -> np.ndarray:
        x1 = spec.x1_low + rng.random(m) * (spec.x1_high - spec.x1_low)
        xis = w * (rng.random((H, d)) - 0.5)
        etas = w * (rng.random((H, m)) - 0.5)
        return pack_planning_context(x1, xis, etas)

    return AdversaryStrategy(
        f"planning_noise_{spec.name}", cls, policy, payload_dim=0, rng_stream=rng_stream
    )


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LipschitzProbeResult:
    realized: float
    declared: float
    n_pairs: int


def fixed_mode_lipschitz_probe(
    spec: HybridSystemSpec, n_pairs: int, rng: np.random.Generator
) -> LipschitzProbeResult:
    """Max over random (plan, plan', mode-sequence) of the fixed-mode state
    gap ratio ||x_{1:H} - x'_{1:H}||_1 / ||plan - plan'||_1.

    Rejects the spec when the realized ratio exceeds the declared constant.
    """
    space = spec.plan_space()
    m, d, H = spec.state_dim, spec.input_dim, spec.H
    worst = 0.0
    for _ in range(n_pairs):
        a = space.sample_uniform(rng).coords
        b = space.sample_uniform(rng).coords
        gap = float(np.sum(np.abs(a - b)))
        if gap < 1e-9:
            continue
        x1 = spec.x1_low + rng.random(m) * (spec.x1_high - spec.x1_low)
        xis = spec.noise_width * (rng.random((H, d)) - 0.5)
        etas = spec.noise_width * (rng.random((H, m)) - 0.5)
        modes = rng.integers(0, spec.K, size=H)
        ta = rollout_fixed_modes(spec, a, x1, xis, etas, modes)
        tb = rollout_fixed_modes(spec, b, x1, xis, etas, modes)
        ratio = float(np.sum(np.abs(ta.xs[:H] - tb.xs[:H]))) / gap
        worst = max(worst, ratio)
    if worst > spec.lipschitz_L * (1.0 + 1e-6):
        raise SpecRejectedError(
            f"measured fixed-mode Lipschitz ratio {worst:.6g} exceeds the "
            f"declared {spec.lipschitz_L}"
        )
    return LipschitzProbeResult(worst, spec.lipschitz_L, n_pairs)


@dataclass(frozen=True)
class ModeAgreementEstimate:
    agree_probability: float
    ci_low: float
    ci_high: float
    n_samples: int


def mode_agreement_probability(
    spec: HybridSystemSpec,
    plan_a: Union[ParamPoint, np.ndarray],
    plan_b: Union[ParamPoint, np.ndarray],
    n_mc: int,
    rng: np.random.Generator,
) -> ModeAgreementEstimate:
    """Probability that coupled rollouts follow identical mode sequences."""
    a = plan_a.coords if isinstance(plan_a, ParamPoint) else np.asarray(plan_a)
    b = plan_b.coords if isinstance(plan_b, ParamPoint) else np.asarray(plan_b)
    m, d, H = spec.state_dim, spec.input_dim, spec.H
    if np.array_equal(a, b) or spec.K == 1:
        return ModeAgreementEstimate(1.0, 1.0, 1.0, n_mc)
    x1 = spec.x1_low + rng.random((n_mc, m)) * (spec.x1_high - spec.x1_low)
    xis = spec.noise_width * (rng.random((n_mc, H, d)) - 0.5)
    etas = spec.noise_width * (rng.random((n_mc, H, m)) - 0.5)
    _, modes, _, _ = rollout_batch(spec, np.stack([a, b]), x1, xis, etas)
    agree = int(np.sum(np.all(modes[0] == modes[1], axis=1)))
    lo, hi = wilson_interval(agree, n_mc)
    return ModeAgreementEstimate(agree / n_mc, lo, hi, n_mc)


def write_trajectory_csv(path: str, trajectories: Sequence[TrajectoryRecord]) -> None:
    """One row per (episode, step): states, inputs, and the active mode."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "h", "x", "u", "mode"])
        for ep, traj in enumerate(trajectories):
            for h in range(traj.us.shape[0]):
                writer.writerow(
                    [
                        ep,
                        h + 1,
                        " ".join(f"{v:.17g}" for v in traj.xs[h]),
                        " ".join(f"{v:.17g}" for v in traj.us[h]),
                        int(traj.modes[h]),
                    ]
                )


# ---------------------------------------------------------------------------
# the two-mode 1-d reference system
# ---------------------------------------------------------------------------


def two_mode_1d_system(
    H: int = 2,
    mode_bias: float = 0.0,
    noise_width: float = 0.5,
    plan_bound: float = 1.0,
    x1_bound: float = 0.0,
    state_clip: float = 10.0,
    loss_target: Optional[np.ndarray] = None,
    loss_scale: float = 0.25,
    loss_weights: Optional[np.ndarray] = None,
    lipschitz_L: float = 1.25,
    name: str = "two_mode_1d",
) -> HybridSystemSpec:
    """Scalar two-mode system: mode 1 plays x + u, mode 2 plays x - u (+ an
    optional bias), and the mode is the sign of the realized input."""
    m = d = 1
    A = np.zeros((H, 2, m, m + d))
    b = np.zeros((H, 2, m))
    W = np.zeros((H, 2, m + d + 1))
    for h in range(H):
        A[h, 0] = np.array([[1.0, 1.0]])  # x + u
        A[h, 1] = np.array([[1.0, -1.0]])  # x - u
        b[h, 1, 0] = mode_bias
        W[h, 0] = np.array([0.0, 1.0, 0.0])  # score u
        W[h, 1] = np.array([0.0, -1.0, 0.0])  # score -u
    u_max = plan_bound + noise_width / 2.0
    x_max = min(state_clip, x1_bound + H * (u_max + abs(mode_bias) + noise_width / 2.0))
    D = x_max + u_max
    spec = HybridSystemSpec(
        H=H,
        K=2,
        state_dim=m,
        input_dim=d,
        affine_A=A,
        affine_b=b,
        boundary=W,
        margin_gamma=2.0,
        lipschitz_L=lipschitz_L,
        v_bound_D=float(D),
        sigma_dir=noise_width / math.sqrt(m + d),
        noise_width=noise_width,
        x1_low=np.full(m, -x1_bound),
        x1_high=np.full(m, x1_bound),
        state_clip=state_clip,
        plan_low=-plan_bound,
        plan_high=plan_bound,
        name=name,
    )
    if loss_target is None:
        loss_target = np.zeros((H, m + d))
    target = np.asarray(loss_target, dtype=np.float64).reshape(H, m + d)
    if loss_weights is None:
        weights = np.ones((H, m + d))
    else:
        weights = np.asarray(loss_weights, dtype=np.float64).reshape(H, m + d)
    if np.any(weights < 0) or np.max(weights) * loss_scale > 1.0:
        raise ValueError("loss weights must be nonnegative with scale*max <= 1")

    def loss_v(vs: np.ndarray) -> np.ndarray:
        return loss_scale * np.sum(weights * np.abs(vs - target), axis=(-2, -1))

    spec.loss_v = loss_v
    return spec
