"""Tie-aware rank correlations.

Both return ``nan`` when a correlation is undefined (a constant argument).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x))
    # boundaries of runs of equal values in sorted order
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], len(x)]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + e - 1) + 1.0
    return ranks


def _check(x, y, min_len):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < min_len:
        raise ValueError(f"need at least {min_len} samples, got {len(x)}")
    return x, y


def spearman(x, y) -> float:
    x, y = _check(x, y, 3)
    rx, ry = average_ranks(x), average_ranks(y)
    dx, dy = rx - rx.mean(), ry - ry.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if denom == 0.0:
        return math.nan
    return float(dx @ dy) / denom


def kendall(x, y) -> float:
    """Kendall's tau-b by direct pair counting."""
    x, y = _check(x, y, 2)
    sx = np.sign(x[:, None] - x[None, :])
    sy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(len(x), k=1)
    sx, sy = sx[iu], sy[iu]
    untied_x, untied_y = float(np.abs(sx).sum()), float(np.abs(sy).sum())
    if untied_x == 0.0 or untied_y == 0.0:
        return math.nan
    return float((sx * sy).sum()) / math.sqrt(untied_x * untied_y)


@dataclass
class RankingResult:
    spearman_rho: float
    kendall_tau: float
    n: int
    n_invalid: int

    def to_json(self) -> dict:
        d = asdict(self)
        for k in ("spearman_rho", "kendall_tau"):
            if not math.isfinite(d[k]):
                d[k] = None
        return d


def rank_scores(scores: Sequence[float | None], truth: Sequence[float]) -> RankingResult:
    """Correlate scores with ground truth over the pairs whose score is valid."""
    if len(scores) != len(truth):
        raise ValueError(f"length mismatch: {len(scores)} vs {len(truth)}")
    keep = [i for i, s in enumerate(scores) if s is not None and math.isfinite(s)]
    n_invalid = len(scores) - len(keep)
    xs = [scores[i] for i in keep]
    ys = [truth[i] for i in keep]
    rho = spearman(xs, ys) if len(keep) >= 3 else math.nan
    tau = kendall(xs, ys) if len(keep) >= 2 else math.nan
    return RankingResult(rho, tau, len(scores), n_invalid)
