"""Random perturbation paths for the perturbed-leader objectives.

Two variants: a linear path with iid standard-exponential coordinate
weights, omega(theta) = -eta * <xi, theta>, and a function-space path
anchored at base-measure draws, omega(f) = eta * sum_i gamma_i * f(x_i).
Exponential coordinates are sampled by inverse CDF on the run's
counter-based generator so draws replay identically across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .core import ContextSample, ParamPoint, ParamSpace

EXPONENTIAL = "exponential"
GAUSSIAN_PROCESS = "gaussian_process"


@dataclass(frozen=True)
class PerturbationDraw:
    """One sampled perturbation path."""

    variant: str
    eta: float
    xi: Optional[np.ndarray] = None
    anchors: Optional[Sequence[ContextSample]] = None
    gammas: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.variant == EXPONENTIAL:
            if self.xi is None or np.any(self.xi < 0):
                raise ValueError("exponential draws need nonnegative xi")
        elif self.variant == GAUSSIAN_PROCESS:
            if self.anchors is None or self.gammas is None:
                raise ValueError("gaussian-process draws need anchors and gammas")
            if len(self.anchors) != len(self.gammas):
                raise ValueError("anchors and gammas must have equal length")
        else:
            raise ValueError(f"unknown perturbation variant {self.variant!r}")


def draw_exponential(dim: int, eta: float, rng: np.random.Generator) -> PerturbationDraw:
    """Sample xi with iid standard-exponential coordinates via inverse CDF."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    u = rng.random(dim)
    xi = -np.log1p(-u)
    return PerturbationDraw(EXPONENTIAL, float(eta), xi=xi)


def draw_gaussian_process(
    base_sampler: Callable[[np.random.Generator], np.ndarray],
    m: int,
    eta: float,
    rng: np.random.Generator,
) -> PerturbationDraw:
    """Sample m anchors from the base measure and m standard-normal weights."""
    if m < 1:
        raise ValueError("m must be >= 1")
    anchors = tuple(ContextSample(base_sampler(rng)) for _ in range(m))
    gammas = rng.standard_normal(m)
    return PerturbationDraw(GAUSSIAN_PROCESS, float(eta), anchors=anchors, gammas=gammas)


def eval_perturbation(
    draw: PerturbationDraw,
    arg: Union[ParamPoint, np.ndarray, Callable[[ContextSample], float]],
) -> float:
    """Evaluate the path on a parameter (exponential) or a function (GP)."""
    if draw.variant == EXPONENTIAL:
        if callable(arg) and not isinstance(arg, (ParamPoint, np.ndarray)):
            raise TypeError("exponential perturbations evaluate on parameters")
        coords = arg.coords if isinstance(arg, ParamPoint) else np.asarray(arg)
        if coords.shape != draw.xi.shape:
            raise ValueError("parameter dimension does not match xi")
        return float(-draw.eta * np.dot(draw.xi, coords))
    if not callable(arg):
        raise TypeError("gaussian-process perturbations evaluate on functions")
    if draw.eta == 0.0:
        return 0.0
    total = sum(g * arg(x) for g, x in zip(draw.gammas, draw.anchors))
    return float(draw.eta * total)


class SupPerturbationBound(NamedTuple):
    certified: float  # eta * linf_bound * dim, a mean bound for the box sup
    realized: float  # eta * sup over the box of <xi, theta> for this draw


def sup_perturbation_bound(space: ParamSpace, draw: PerturbationDraw) -> SupPerturbationBound:
    """Certified expectation bound and realized sup of the linear path.

    The certified value bounds E[sup_theta eta*<xi, theta>] over the box;
    the realized value maximizes coordinatewise (xi >= 0, so each
    coordinate independently picks its best box endpoint).
    """
    if draw.variant != EXPONENTIAL:
        raise ValueError("sup bound is only defined for the exponential variant")
    certified = draw.eta * space.linf_bound * space.dim_total
    per_coord = np.maximum(draw.xi * space.box_lower, draw.xi * space.box_upper)
    realized = draw.eta * float(np.sum(per_coord))
    return SupPerturbationBound(float(certified), realized)
