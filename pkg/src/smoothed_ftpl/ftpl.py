"""Epoch-lazy follow-the-perturbed-leader and its tuning rules.

One run: split the horizon into epochs of length n; at each epoch head,
draw a fresh perturbation, call the ERM solver on all losses from strictly
earlier epochs plus the perturbation, and play the returned parameter for
the whole epoch.  Exactly ceil(T / n) solver calls are made.

Tuning rules map problem constants to (eta, n) with every hidden constant
and polylog factor set to 1; eta is capped at 10*T and n at T, since past
that the perturbation alone exceeds the trivial regret bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import ContextSample, LossSpec, ParamSpace, PseudoMetricSpec
from .oracle import ErmProblem, OracleResult, Solver
from .perturbation import (
    EXPONENTIAL,
    GAUSSIAN_PROCESS,
    PerturbationDraw,
    draw_exponential,
    draw_gaussian_process,
)
from .smoothing import AdversaryStrategy, RunHistory, sample_context


@dataclass(frozen=True)
class EpochSchedule:
    T: int
    n: int

    def __post_init__(self):
        if self.T < 1 or self.n < 1:
            raise ValueError("need T >= 1 and n >= 1")

    @property
    def num_epochs(self) -> int:
        return -(-self.T // self.n)

    def steps_in(self, tau: int) -> range:
        if not 1 <= tau <= self.num_epochs:
            raise ValueError(f"epoch {tau} out of range")
        return range((tau - 1) * self.n + 1, min(tau * self.n, self.T) + 1)


def epoch_of(t: int, schedule: EpochSchedule) -> int:
    """Epoch index of step t (1-based): ceil(t / n)."""
    if not 1 <= t <= schedule.T:
        raise ValueError(f"step {t} outside 1..{schedule.T}")
    return -(-t // schedule.n)


@dataclass(frozen=True)
class HyperParams:
    eta: float
    n: int
    rule_id: str = "manual"
    constants_policy: str = "all-hidden-constants-1"

    def __post_init__(self):
        if self.eta < 0 or self.n < 1:
            raise ValueError("need eta >= 0 and n >= 1")


ETA_CAP_FACTOR = 10.0


def _finish(eta: float, n_raw: float, rule_id: str, T: int) -> HyperParams:
    eta = min(eta, ETA_CAP_FACTOR * T)
    n = int(min(max(1, round(n_raw)), T))
    return HyperParams(eta=float(eta), n=n, rule_id=rule_id)


def _require_positive(**kwargs: float) -> None:
    for name, value in kwargs.items():
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")


def tune_affine(
    T: int, K: int, d: int, D: float, B: float, A: float, a: float, sigma_dir: float
) -> HyperParams:
    """eta = (T K^2 d D B A / (a sigma_dir))^(2/3), n = sqrt(eta)."""
    _require_positive(T=T, K=K, d=d, D=D, B=B, A=A, a=a, sigma_dir=sigma_dir)
    eta = (T * K**2 * d * D * B * A / (a * sigma_dir)) ** (2.0 / 3.0)
    return _finish(eta, math.sqrt(eta), "affine", T)


def tune_polynomial(
    T: int, K: int, r: int, d: int, D: float, B: float, sigma_poly: float
) -> HyperParams:
    """eta = base^((4r-2)/(4r-1)), n = base^((2r-1)/(4r-1)) for
    base = T K^2 r^2 d^r D B / sigma_poly."""
    _require_positive(T=T, K=K, r=r, d=d, D=D, B=B, sigma_poly=sigma_poly)
    base = T * K**2 * r**2 * d**r * D * B / sigma_poly
    eta = base ** ((4 * r - 2) / (4 * r - 1))
    n_raw = base ** ((2 * r - 1) / (4 * r - 1))
    return _finish(eta, n_raw, "polynomial", T)


def tune_planning(
    T: int, d: int, H: int, K: int, D: float, L: float, gamma: float, sigma_dir: float
) -> HyperParams:
    """eta = d^(1/3) H^(5/3) K^(4/3) (T L D / (gamma sigma_dir))^(2/3)."""
    _require_positive(T=T, d=d, H=H, K=K, D=D, L=L, gamma=gamma, sigma_dir=sigma_dir)
    eta = (
        d ** (1.0 / 3.0)
        * H ** (5.0 / 3.0)
        * K ** (4.0 / 3.0)
        * (T * L * D / (gamma * sigma_dir)) ** (2.0 / 3.0)
    )
    return _finish(eta, math.sqrt(eta), "planning", T)


def tune_margin(
    T: int,
    K: int,
    A: float,
    a: float,
    d: int,
    D: float,
    B: float,
    gamma: float,
    sigma_dir: float,
) -> HyperParams:
    """Affine tuning with K^2 replaced by K and a 1/gamma margin factor."""
    _require_positive(T=T, K=K, A=A, a=a, d=d, D=D, B=B, gamma=gamma, sigma_dir=sigma_dir)
    eta = (T * K * A * d * D * B / (gamma * a * sigma_dir)) ** (2.0 / 3.0)
    return _finish(eta, math.sqrt(eta), "margin", T)


# ---------------------------------------------------------------------------
# run records
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    """Complete trace of one lazy-FTPL run."""

    env_name: str
    T: int
    n: int
    eta: float
    seed: int
    contexts: np.ndarray  # (T, zdim)
    payload_dim: int
    losses: np.ndarray  # (T,)
    step_epochs: np.ndarray  # (T,), 1-based epoch per step
    epoch_thetas: np.ndarray  # (num_epochs, dim)
    epoch_objectives: np.ndarray  # (num_epochs,)
    epoch_gammas: List[Union[float, str]]
    perturbation_summaries: List[dict]
    oracle_call_count: int
    valid: bool = True
    warnings: Tuple[str, ...] = ()

    @property
    def cumulative_loss(self) -> float:
        return float(np.sum(self.losses))

    def context_samples(self) -> List[ContextSample]:
        return [ContextSample(z, payload_dim=self.payload_dim) for z in self.contexts]

    def mean_stability(self) -> float:
        """Mean l1 gap between consecutive epoch parameters (0 if < 2 epochs)."""
        if self.epoch_thetas.shape[0] < 2:
            return 0.0
        gaps = np.sum(np.abs(np.diff(self.epoch_thetas, axis=0)), axis=1)
        return float(np.mean(gaps))

    def to_json_dict(self) -> dict:
        return {
            "env_name": self.env_name,
            "T": self.T,
            "n": self.n,
            "eta": self.eta,
            "seed": self.seed,
            "payload_dim": self.payload_dim,
            "oracle_call_count": self.oracle_call_count,
            "valid": self.valid,
            "warnings": list(self.warnings),
            "losses": self.losses.tolist(),
            "step_epochs": self.step_epochs.tolist(),
            "epoch_thetas": self.epoch_thetas.tolist(),
            "epoch_objectives": self.epoch_objectives.tolist(),
            "epoch_gammas": [
                g if isinstance(g, str) else float(g) for g in self.epoch_gammas
            ],
            "perturbation_summaries": self.perturbation_summaries,
            "contexts": self.contexts.tolist(),
        }


@dataclass
class OnlineEnvironment:
    """Everything a run needs: the box, the loss, its pseudo-metric, and a
    context-sampling adversary (plus a base sampler for the function-space
    perturbation variant)."""

    name: str
    space: ParamSpace
    loss: LossSpec
    adversary: AdversaryStrategy
    metric: Optional[PseudoMetricSpec] = None
    gp_base_sampler: Optional[Callable[[np.random.Generator], np.ndarray]] = None


def _stream(seed: int, *key: int) -> np.random.Generator:
    # counter-based substreams: one Philox generator per (seed, key) pair
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=key))
    )


def run_lazy_ftpl(
    env: OnlineEnvironment,
    solver: Solver,
    perturbation_kind: str,
    hyper: HyperParams,
    T: int,
    seed: int,
    gp_anchors: Optional[int] = None,
) -> RunRecord:
    """Run epoch-lazy FTPL for T steps; deterministic given the seed.

    Epoch tau solves on losses of epochs strictly before tau plus a fresh
    perturbation draw.  The adversary sees all previous contexts and all
    previously played parameters.
    """
    if perturbation_kind not in (EXPONENTIAL, GAUSSIAN_PROCESS):
        raise ValueError(f"unknown perturbation kind {perturbation_kind!r}")
    schedule = EpochSchedule(T, hyper.n)
    warnings: List[str] = []
    if perturbation_kind == EXPONENTIAL and hyper.eta < hyper.n**2:
        warnings.append("eta_below_n_squared")

    adv_rng = _stream(seed, 0, env.adversary.rng_stream)
    history = RunHistory()
    dataset: List[ContextSample] = []
    contexts = []
    losses = np.zeros(T)
    step_epochs = np.zeros(T, dtype=np.intp)
    thetas = []
    objectives = []
    gammas: List[Union[float, str]] = []
    pert_summaries: List[dict] = []
    valid = True

    for tau in range(1, schedule.num_epochs + 1):
        pert_rng = _stream(seed, 1, tau)
        if perturbation_kind == EXPONENTIAL:
            draw = draw_exponential(env.space.dim_total, hyper.eta, pert_rng)
            pert_summaries.append(
                {"variant": EXPONENTIAL, "eta": hyper.eta, "xi_l1": float(np.sum(draw.xi))}
            )
        else:
            if env.gp_base_sampler is None:
                raise ValueError(f"environment {env.name!r} has no base sampler")
            m = gp_anchors if gp_anchors is not None else max(1, round(math.sqrt(T)))
            draw = draw_gaussian_process(env.gp_base_sampler, m, hyper.eta, pert_rng)
            pert_summaries.append(
                {"variant": GAUSSIAN_PROCESS, "eta": hyper.eta, "m": m}
            )
        problem = ErmProblem(tuple(dataset), env.loss, env.space, perturbation=draw)
        try:
            result: OracleResult = solver(problem, rng=_stream(seed, 2, tau))
        except Exception:
            valid = False
            warnings.append(f"solver_failfailure_epoch_{tau}")
            break
        theta = result.theta_star
        thetas.append(theta.coords)
        objectives.append(result.objective_value)
        gammas.append(result.suboptimality_gamma)

        for t in schedule.steps_in(tau):
            z = sample_context(env.adversary, history, adv_rng)
            loss_t = env.loss.eval(theta, z)
            losses[t - 1] = loss_t
            step_epochs[t - 1] = tau
            contexts.append(z.z)
            dataset.append(z)
            history.append(z.z, theta.coords)

    n_steps = len(contexts)
    record = RunRecord(
        env_name=env.name,
        T=T,
        n=hyper.n,
        eta=hyper.eta,
        seed=seed,
        contexts=np.asarray(contexts).reshape(n_steps, -1),
        payload_dim=env.adversary.payload_dim,
        losses=losses[:n_steps] if not valid else losses,
        step_epochs=step_epochs[:n_steps] if not valid else step_epochs,
        epoch_thetas=np.asarray(thetas),
        epoch_objectives=np.asarray(objectives),
        epoch_gammas=gammas,
        perturbation_summaries=pert_summaries,
        oracle_call_count=len(thetas),
        valid=valid,
        warnings=tuple(warnings),
    )
    return record
