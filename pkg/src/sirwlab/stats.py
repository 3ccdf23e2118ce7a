"""Distribution distances used as falsifiable proxies for weak convergence."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import stats


def ks_distance(sample_a: Sequence[float], sample_b: Sequence[float]) -> float:
    """Two-sample Kolmogorov-Smirnov statistic ``sup |F_a - F_b|`` over pooled points."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    return float(stats.ks_2samp(a, b).statistic)


def ks_to_cdf(sample: Sequence[float], cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """One-sample KS statistic against a continuous CDF."""
    return float(stats.kstest(np.asarray(sample, dtype=np.float64), cdf).statistic)
