"""Shared domain types: parameter spaces, contexts, losses, pseudo-metrics.

Parameter spaces are axis-aligned boxes.  All values are float64 and all
types here are immutable after construction, so they can be shared freely
across parallel workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class DimensionMismatchError(ValueError):
    """Raised when vectors from incompatible spaces are combined."""


def canonicalize(x: np.ndarray) -> np.ndarray:
    """Normalize float representations before exact comparisons.

    Maps -0.0 to +0.0 so that tie-breaking by exact equality is
    deterministic.  No epsilon is involved anywhere in tie handling.
    """
    x = np.asarray(x, dtype=np.float64)
    return np.where(x == 0.0, 0.0, x)


@dataclass(frozen=True)
class ParamSpace:
    """Axis-aligned box of decision vectors, split into a continuous and a
    discrete block (coords are laid out [continuous | discrete])."""

    box_lower: np.ndarray
    box_upper: np.ndarray
    dim_continuous: int = 0
    dim_discrete: int = 0

    def __post_init__(self):
        lo = canonicalize(self.box_lower)
        hi = canonicalize(self.box_upper)
        object.__setattr__(self, "box_lower", lo)
        object.__setattr__(self, "box_upper", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionMismatchError("box bounds must be 1-d and equal length")
        if np.any(lo > hi):
            raise ValueError("box_lower must be <= box_upper coordinatewise")
        if self.dim_continuous == 0 and self.dim_discrete == 0:
            object.__setattr__(self, "dim_continuous", lo.size)
        if self.dim_continuous + self.dim_discrete != lo.size:
            raise DimensionMismatchError(
                "dim_continuous + dim_discrete must equal the box dimension"
            )
        lo.flags.writeable = False
        hi.flags.writeable = False

    @property
    def dim_total(self) -> int:
        return self.box_lower.size

    @property
    def l1_diameter_D(self) -> float:
        """Sup of the l1 distance between any two box points."""
        return float(np.sum(self.box_upper - self.box_lower))

    @property
    def linf_bound(self) -> float:
        """Largest coordinate magnitude attainable inside the box."""
        if self.dim_total == 0:
            return 0.0
        return float(np.max(np.maximum(np.abs(self.box_lower), np.abs(self.box_upper))))

    def contains(self, coords: np.ndarray, atol: float = 0.0) -> bool:
        c = np.asarray(coords, dtype=np.float64)
        return bool(
            np.all(c >= self.box_lower - atol) and np.all(c <= self.box_upper + atol)
        )

    def center(self) -> "ParamPoint":
        return ParamPoint(0.5 * (self.box_lower + self.box_upper), self)

    def sample_uniform(self, rng: np.random.Generator) -> "ParamPoint":
        u = rng.random(self.dim_total)
        return ParamPoint(self.box_lower + u * (self.box_upper - self.box_lower), self)


@dataclass(frozen=True)
class ParamPoint:
    """A decision vector living in a ParamSpace box."""

    coords: np.ndarray
    space: ParamSpace

    def __post_init__(self):
        c = canonicalize(self.coords)
        object.__setattr__(self, "coords", c)
        if c.shape != (self.space.dim_total,):
            raise DimensionMismatchError(
                f"expected {self.space.dim_total} coords, got {c.shape}"
            )
        if not self.space.contains(c, atol=1e-12):
            raise ValueError("coordinates outside the owning box")
        c.flags.writeable = False

    @property
    def theta_c(self) -> np.ndarray:
        """Continuous block (leading dim_continuous coordinates)."""
        return self.coords[: self.space.dim_continuous]

    @property
    def theta_d(self) -> np.ndarray:
        """Discrete block (trailing dim_discrete coordinates)."""
        return self.coords[self.space.dim_continuous :]

    def continuous_block(self, k: int, n_blocks: int) -> np.ndarray:
        """k-th of n equal slices of the continuous block."""
        size = self.space.dim_continuous // n_blocks
        return self.theta_c[k * size : (k + 1) * size]


@dataclass(frozen=True)
class ContextSample:
    """One context vector z emitted by the adversary.

    For supervised environments the trailing coordinates carry the label
    payload; `payload_dim` says how many.
    """

    z: np.ndarray
    payload_dim: int = 0

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        object.__setattr__(self, "z", z)
        z.flags.writeable = False

    @property
    def x(self) -> np.ndarray:
        """Leading (non-payload) block."""
        d = self.z.size - self.payload_dim
        return self.z[:d]

    @property
    def payload(self) -> np.ndarray:
        return self.z[self.z.size - self.payload_dim :]


class LossSpec:
    """Interface for losses l(theta, z) with values in [0, 1].

    Subclasses implement `eval`; `eval_batch` is an optional fast path
    evaluating a (P, dim) array of parameters against an (N, zdim) array of
    contexts, returning a (P, N) array.  The default batch path loops.
    """

    metric: Optional["PseudoMetricSpec"] = None

    def eval(self, theta: ParamPoint, z: ContextSample) -> float:
        raise NotImplementedError

    def eval_batch(self, thetas: np.ndarray, zs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def has_batch(self) -> bool:
        return type(self).eval_batch is not LossSpec.eval_batch


@dataclass(frozen=True)
class PseudoMetricSpec:
    """A context-indexed pseudo-metric rho(theta, theta', z) on a box.

    `iso_alpha`, `iso_beta` record the declared expected-contraction
    constants: the class-level mean of rho is promised to be at most
    alpha * ||theta - theta'||_1 ** beta.  `diameter_bound_Drho` caps rho
    pointwise.
    """

    eval_fn: Callable[[ParamPoint, ParamPoint, ContextSample], float]
    diameter_bound_Drho: float
    iso_alpha: float
    iso_beta: float = 1.0
    name: str = "rho"
    # optional fast path: (thetas_a (P,dim), thetas_b (P,dim), zs (N,zdim)) -> (P,N)
    eval_batch_fn: Optional[Callable[..., np.ndarray]] = field(default=None, repr=False)

    def __post_init__(self):
        if not (0.0 < self.iso_beta <= 1.0):
            raise ValueError("iso_beta must lie in (0, 1]")
        if self.diameter_bound_Drho < 0:
            raise ValueError("diameter bound must be nonnegative")

    def mean_bound(self, a: ParamPoint, b: ParamPoint) -> float:
        """Class-level upper bound on E[rho(a, b, z)] (capped at the diameter)."""
        gap = l1_distance(a, b)
        return float(min(self.diameter_bound_Drho, self.iso_alpha * gap**self.iso_beta))


def l1_distance(a: ParamPoint, b: ParamPoint) -> float:
    """l1 distance between two points of the same space."""
    if a.space.dim_total != b.space.dim_total:
        raise DimensionMismatchError("points live in different spaces")
    return float(np.sum(np.abs(a.coords - b.coords)))


def clamp_to_space(p: np.ndarray, s: ParamSpace) -> ParamPoint:
    """Clip a raw vector into the box and wrap it as a ParamPoint."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (s.dim_total,):
        raise DimensionMismatchError(f"expected length {s.dim_total}, got {p.shape}")
    return ParamPoint(np.clip(p, s.box_lower, s.box_upper), s)


def eval_rho(
    spec: PseudoMetricSpec, a: ParamPoint, b: ParamPoint, z: ContextSample
) -> float:
    """Evaluate the pseudo-metric; result is clipped-checked nonnegative."""
    v = float(spec.eval_fn(a, b, z))
    if v < 0:
        raise ValueError(f"pseudo-metric {spec.name} returned a negative value")
    return v
