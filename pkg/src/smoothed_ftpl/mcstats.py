"""Small Monte Carlo statistics helpers shared by the validators."""

from __future__ import annotations

import math
from typing import Tuple

import numpy as np


def wilson_interval(successes: int, trials: int, z: float = 1.96) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion (default 95%)."""
    if trials <= 0:
        return (0.0, 1.0)
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials))
    return (max(0.0, center - half), min(1.0, center + half))


def mean_and_se(values: np.ndarray) -> Tuple[float, float]:
    """Sample mean and its standard error (0 SE for < 2 samples)."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n == 0:
        return (0.0, 0.0)
    m = float(np.mean(values))
    if n < 2:
        return (m, 0.0)
    se = float(np.std(values, ddof=1) / math.sqrt(n))
    return (m, se)
