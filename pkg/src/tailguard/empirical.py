"""Order statistics, empirical quantiles and small variance helpers.

Every other module works on sorted samples of induced scores, so the
quantile convention fixed here (left-continuous, ``inf{x : F(x) >= p}``)
propagates everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "SortedSample",
    "ceil_index",
    "empirical_cdf",
    "empirical_quantile",
    "plug_in_variance",
    "sort_sample",
    "spearman",
]

# Slack for products like n * p that land a few ulps above an integer.
_INDEX_SLACK = 1e-9


def ceil_index(n: int, p: float) -> int:
    """Return ``ceil(n * p)`` clipped to ``[1, n]``, robust to rounding noise."""
    k = math.ceil(n * p - _INDEX_SLACK)
    return min(max(k, 1), n)


@dataclass(frozen=True)
class SortedSample:
    """Ascending sample with declared score bounds.

    Construct through :func:`sort_sample`; the constructor trusts its input.
    """

    values: np.ndarray
    lo: float = 0.0
    hi: float = 1.0

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    def order_stat(self, i: int) -> float:
        """1-indexed order statistic ``r_(i)``."""
        return float(self.values[i - 1])


def sort_sample(values: Sequence[float] | np.ndarray, lo: float = 0.0, hi: float = 1.0) -> SortedSample:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("empty sample")
    bad = np.flatnonzero(~((arr >= lo) & (arr <= hi)))
    if bad.size:
        raise ValueError(f"out of bounds at index {int(bad[0])}")
    return SortedSample(np.sort(arr, kind="stable"), float(lo), float(hi))


def empirical_quantile(s: SortedSample, p: float) -> float:
    """Left-continuous empirical quantile ``r_(ceil(n p))``."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"quantile level must lie in (0, 1], got {p}")
    return s.order_stat(ceil_index(s.n, p))


def empirical_cdf(s: SortedSample, x: float) -> float:
    return float(np.searchsorted(s.values, x, side="right")) / s.n


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    xs = x[order]
    # boundaries of runs of tied values
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], xs.size]
    avg = (starts + ends + 1) / 2.0  # mean of 1-indexed positions start+1..end
    ranks = np.empty(x.size)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def spearman(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    """Spearman rank correlation with average ranks for ties."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("spearman needs at least two observations")
    ra = _average_ranks(a)
    rb = _average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if denom == 0.0:
        return float("nan")
    return float(np.clip((ra @ rb) / denom, -1.0, 1.0))


def plug_in_variance(values: Sequence[float] | np.ndarray) -> float:
    """Variance with divisor ``n`` (mean of squares minus squared mean)."""
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("empty sample")
    centered = arr - arr.mean()
    return float(centered @ centered) / arr.size
