"""Paired significance testing of prediction errors."""

from __future__ import annotations

import numpy as np
from scipy.stats import norm, rankdata


def wilcoxon_signed_rank(errors_a, errors_b) -> tuple[float, float]:
    """Two-sided Wilcoxon signed-rank test by normal approximation.

    Zero differences are dropped, tied magnitudes get mid-ranks, and the
    variance carries the tie correction. A 0.5 continuity correction is
    applied. Returns ``(W+, p_value)`` where W+ is the rank sum of the
    positive differences ``a - b``.
    """
    a = np.asarray(errors_a, dtype=np.float64)
    b = np.asarray(errors_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-D and of equal length")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n < 5:
        raise ValueError(f"need at least 5 nonzero differences, got {n}")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    if var <= 0:
        raise ValueError("degenerate rank variance")
    z = max(abs(w_plus - mean) - 0.5, 0.0) / np.sqrt(var)
    return w_plus, float(min(1.0, 2.0 * norm.sf(z)))


def paired_abs_errors(pred_a, pred_b, target):
    target = np.asarray(target, dtype=np.float64)
    return np.abs(np.asarray(pred_a) - target), np.abs(np.asarray(pred_b) - target)
