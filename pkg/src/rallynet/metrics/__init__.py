"""Evaluation metrics: DTW, CTC, RNS/MRNS, length JSD, win-rate difference.

The two dynamic-programming kernels (DTW accumulation and the CTC forward
pass) dispatch to a compiled Cython extension when it is importable, and to
the pure-numpy reference otherwise. Set RALLYNET_PURE_PYTHON=1 to force the
fallback; `BACKEND` reports which one is active.
"""

from __future__ import annotations

import math
import os

import numpy as np

from . import _reference

if os.environ.get("RALLYNET_PURE_PYTHON") == "1":
    _impl = _reference
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _reference

BACKEND = "cython" if _impl is not _reference else "python"

N_CTC_SYMBOLS = 13  # 12 shot types + blank
CTC_BLANK = 12


class EmptyInputError(ValueError):
    """A metric received an empty sequence or multiset."""


class InfeasibleAlignmentError(ValueError):
    """The CTC prediction is shorter than any valid alignment of the labels."""


class UndefinedNormalizationError(ZeroDivisionError):
    """RNS is undefined when the random and rule anchors coincide."""


def _as_points(seq) -> np.ndarray:
    pts = []
    for p in seq:
        if hasattr(p, "x"):
            pts.append((p.x, p.y))
        else:
            pts.append((float(p[0]), float(p[1])))
    return np.ascontiguousarray(pts, dtype=np.float64)


def dtw_distance(seq_a, seq_b) -> float:
    """Classic DTW with Euclidean pointwise cost, no window, no path normalization."""
    if len(seq_a) == 0 or len(seq_b) == 0:
        raise EmptyInputError("DTW requires two non-empty sequences")
    a = _as_points(seq_a)
    b = _as_points(seq_b)
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    return _impl.dtw_accumulate(np.ascontiguousarray(cost))


def ctc_required_frames(labels) -> int:
    """Minimum prediction length admitting a valid CTC alignment."""
    labels = list(labels)
    dups = sum(1 for i in range(1, len(labels)) if labels[i] == labels[i - 1])
    return len(labels) + dups


def ctc_loss(pred_seq, true_seq, blank: int = CTC_BLANK) -> float:
    """CTC forward-algorithm negative log-likelihood, accumulated in log space.

    pred_seq: (T, V) per-step probability distributions (V includes the blank
    column); true_seq: label ids, none equal to blank.
    """
    probs = np.ascontiguousarray(pred_seq, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise EmptyInputError("CTC prediction must be a non-empty (T, V) array")
    labels = np.ascontiguousarray(true_seq, dtype=np.int64)
    if np.any(labels == blank) or np.any(labels < 0) or np.any(labels >= probs.shape[1]):
        raise ValueError("CTC labels must be valid non-blank class ids")
    if probs.shape[0] < ctc_required_frames(labels):
        raise InfeasibleAlignmentError(
            f"prediction length {probs.shape[0]} < required "
            f"{ctc_required_frames(labels)} for labels {labels.tolist()}"
        )
    with np.errstate(divide="ignore"):
        log_probs = np.log(probs)
    return _impl.ctc_forward_nll(log_probs, labels, blank)


def rns(random_score: float, rule_score: float, agent_score: float) -> float:
    """Rule-based-agent Normalized Score: (random - agent) / (random - rule)."""
    denom = random_score - rule_score
    if denom == 0:
        raise UndefinedNormalizationError("random and rule anchors coincide")
    return (random_score - agent_score) / denom


def mrns(land_rns: float, shot_rns: float, move_rns: float) -> float:
    """Mean of the three per-metric RNS values."""
    for v in (land_rns, shot_rns, move_rns):
        if not math.isfinite(v):
            raise ValueError(f"non-finite RNS input: {v}")
    return (land_rns + shot_rns + move_rns) / 3.0


def length_histograms(real_lengths, gen_lengths, max_len: int | None = None):
    """Normalized histograms of two rally-length multisets over integer bins [1, max]."""
    real = list(real_lengths)
    gen = list(gen_lengths)
    if not real or not gen:
        raise EmptyInputError("length_jsd requires two non-empty multisets")
    hi = max_len if max_len is not None else max(max(real), max(gen))
    bins = np.arange(1, hi + 2)
    p, _ = np.histogram(real, bins=bins)
    q, _ = np.histogram(gen, bins=bins)
    return p / p.sum(), q / q.sum()


def length_jsd(real_lengths, gen_lengths, max_len: int | None = None) -> float:
    """Base-2 Jensen-Shannon divergence between rally-length histograms; in [0, 1]."""
    p, q = length_histograms(real_lengths, gen_lengths, max_len=max_len)
    m = 0.5 * (p + q)

    def kl(a, b):
        mask = a > 0
        return float(np.sum(a[mask] * np.log2(a[mask] / b[mask])))

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def gaussian_kde_density(lengths, grid=None):
    """Scott's-rule Gaussian KDE over lengths, for plotting only (not the JSD number)."""
    x = np.asarray(list(lengths), dtype=np.float64)
    if x.size == 0:
        raise EmptyInputError("KDE requires at least one sample")
    if grid is None:
        grid = np.linspace(0.0, max(x.max() + 3.0, 10.0), 200)
    std = x.std()
    bw = std * x.size ** (-1.0 / 5.0) if std > 0 else 1.0
    bw = max(bw, 1e-3)
    dens = np.exp(-0.5 * ((grid[:, None] - x[None, :]) / bw) ** 2).sum(axis=1)
    dens /= x.size * bw * math.sqrt(2 * math.pi)
    return grid, dens


def win_rate_difference(gt: float, sim: float) -> float:
    """Absolute difference between ground-truth and simulated win rates."""
    for v in (gt, sim):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"win rate {v} outside [0, 1]")
    return abs(gt - sim)
