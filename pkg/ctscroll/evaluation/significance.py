"""Paired t-test across seeded runs."""

from __future__ import annotations

import numpy as np
from statsmodels.stats.weightstats import DescrStatsW

from ctscroll.errors import ShapeError


def paired_t_test(metric_runs_a: np.ndarray, metric_runs_b: np.ndarray) -> float:
    """
    Two-sided p-value of the mean paired difference d = a − b (Student t, R − 1 d.o.f.).

    Zero-variance differences give p = 0 when mean(d) ≠ 0 and p = 1 otherwise.
    """
    a = np.asarray(metric_runs_a, dtype=np.float64)
    b = np.asarray(metric_runs_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"Paired runs must be equal-length vectors, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise ShapeError(f"A paired t-test needs at least 2 runs, got {a.size}")
    d = a - b
    if np.all(d == d[0]):
        return 0.0 if d[0] != 0.0 else 1.0
    _, p_value, _ = DescrStatsW(d).ttest_mean(0.0, alternative="two-sided")
    return float(p_value)
