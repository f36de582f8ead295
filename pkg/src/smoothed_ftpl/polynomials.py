"""Dense multivariate polynomials over graded-lexicographic monomial bases.

A polynomial of degree <= r in d variables is a flat coefficient vector
aligned with `monomial_exponents(d, r)`.  The top-degree coefficient norm
(Euclidean norm of the degree-r block) is the normalization handle used by
boundary specs and smoothness estimators.
"""

from __future__ import annotations

from functools import lru_cache
from typing import List, Tuple

import numpy as np


@lru_cache(maxsize=None)
def monomial_exponents(d: int, r: int) -> Tuple[Tuple[int, ...], ...]:
    """Exponent tuples for all monomials of total degree <= r in d variables.

    Ordered by total degree ascending, then lexicographically descending
    within each degree (x1^2 before x1*x2 before x2^2).
    """
    if d < 1 or r < 0:
        raise ValueError("need d >= 1 and r >= 0")
    by_degree: List[List[Tuple[int, ...]]] = []
    for deg in range(r + 1):
        level = sorted(_compositions(deg, d), reverse=True)
        by_degree.append(level)
    return tuple(e for level in by_degree for e in level)


def _compositions(total: int, parts: int) -> List[Tuple[int, ...]]:
    if parts == 1:
        return [(total,)]
    out = []
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            out.append((first,) + rest)
    return out


def n_monomials(d: int, r: int) -> int:
    return len(monomial_exponents(d, r))


def top_degree_slice(d: int, r: int) -> slice:
    """Index range of the degree-r block inside the coefficient vector."""
    below = sum(1 for e in monomial_exponents(d, r) if sum(e) < r)
    return slice(below, n_monomials(d, r))


def coeff_top_norm(coeffs: np.ndarray, d: int, r: int) -> float:
    """Euclidean norm of the top-degree coefficient block."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape[-1] != n_monomials(d, r):
        raise ValueError(
            f"expected {n_monomials(d, r)} coefficients for d={d}, r={r}"
        )
    return float(np.linalg.norm(coeffs[..., top_degree_slice(d, r)]))


def monomial_matrix(zs: np.ndarray, d: int, r: int) -> np.ndarray:
    """Evaluate every monomial at every row of zs: (N, d) -> (N, n_monomials)."""
    zs = np.atleast_2d(np.asarray(zs, dtype=np.float64))
    if zs.shape[1] != d:
        raise ValueError(f"contexts have dimension {zs.shape[1]}, expected {d}")
    exps = monomial_exponents(d, r)
    cols = [np.prod(zs ** np.array(e, dtype=np.float64), axis=1) for e in exps]
    return np.stack(cols, axis=1)


def poly_eval(coeffs: np.ndarray, zs: np.ndarray, d: int, r: int) -> np.ndarray:
    """Evaluate the polynomial at each row of zs; returns shape (N,)."""
    return monomial_matrix(zs, d, r) @ np.asarray(coeffs, dtype=np.float64)


def normalize_top_degree(coeffs: np.ndarray, d: int, r: int) -> np.ndarray:
    """Rescale so the top-degree coefficient block has unit Euclidean norm."""
    coeffs = np.asarray(coeffs, dtype=np.float64).copy()
    norm = coeff_top_norm(coeffs, d, r)
    if norm == 0.0:
        raise ValueError("top-degree block is identically zero; cannot normalize")
    return coeffs / norm
