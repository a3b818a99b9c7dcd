"""Pure-Python/numpy reference implementations of the metric kernels.

Used as the fallback backend when the compiled extension is unavailable,
and as the slow side of the kernel benchmark.
"""

from __future__ import annotations

import math

import numpy as np


def dtw_accumulate(cost: np.ndarray) -> float:
    """Classic DTW on a precomputed pointwise cost matrix, no window, no normalization."""
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(n):
        for j in range(m):
            acc[i + 1, j + 1] = cost[i, j] + min(acc[i, j], acc[i, j + 1], acc[i + 1, j])
    return float(acc[n, m])


def _logaddexp(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    hi, lo = (a, b) if a > b else (b, a)
    return hi + math.log1p(math.exp(lo - hi))


def ctc_forward_nll(log_probs: np.ndarray, labels: np.ndarray, blank: int) -> float:
    """CTC negative log-likelihood via the forward algorithm in log space.

    log_probs: (T, V) per-frame log distributions; labels: (L,) class ids.
    """
    T = log_probs.shape[0]
    L = labels.shape[0]
    S = 2 * L + 1
    ext = np.full(S, blank, dtype=np.int64)
    ext[1::2] = labels

    alpha = np.full(S, -math.inf)
    alpha[0] = log_probs[0, ext[0]]
    if S > 1:
        alpha[1] = log_probs[0, ext[1]]
    for t in range(1, T):
        prev = alpha
        alpha = np.full(S, -math.inf)
        for s in range(S):
            a = prev[s]
            if s >= 1:
                a = _logaddexp(a, prev[s - 1])
            if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                a = _logaddexp(a, prev[s - 2])
            alpha[s] = a + log_probs[t, ext[s]]
    total = alpha[S - 1]
    if S > 1:
        total = _logaddexp(total, alpha[S - 2])
    return -float(total)
