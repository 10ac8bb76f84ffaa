"""Distortion risk measures and their L-statistic estimators.

A distortion risk measure is a weighted average of quantiles,
``R(F) = int_0^1 F^{-1}(p) dpsi(p)``.  Its plug-in estimate on a sorted sample
is the L-statistic ``sum_i {psi(i/n) - psi((i-1)/n)} r_(i)``.

Standard deviations are kept on the ``sqrt(n)`` scale: ``sd`` estimates the
asymptotic standard deviation of ``sqrt(n) * (R_hat - R)``, and the ``1/sqrt(n)``
factor enters only in :func:`ucb`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Sequence

import numpy as np
from scipy.stats import binom

from .empirical import SortedSample, ceil_index, empirical_quantile, plug_in_variance

__all__ = [
    "RiskEstimate",
    "WeightMeasure",
    "estimate_risk",
    "lstat_weights",
    "normal_quantile",
    "ucb",
    "variance_cvar",
    "variance_general",
    "variance_var_bootstrap",
]

MEAN = "mean"
CVAR = "cvar"
VAR = "var"
PIECEWISE = "piecewise"

DEFAULT_BOOTSTRAP = 1000


@dataclass(frozen=True)
class WeightMeasure:
    """Quantile weighting ``psi`` of a distortion risk measure.

    Use the constructors :meth:`mean`, :meth:`cvar`, :meth:`var` and
    :meth:`piecewise` rather than building instances directly.
    """

    kind: str
    beta: float | None = None
    breakpoints: tuple[float, ...] = ()
    densities: tuple[float, ...] = ()

    @classmethod
    def mean(cls) -> "WeightMeasure":
        return cls(MEAN)

    @classmethod
    def cvar(cls, beta: float) -> "WeightMeasure":
        _check_beta(beta)
        return cls(CVAR, beta=float(beta))

    @classmethod
    def var(cls, beta: float) -> "WeightMeasure":
        _check_beta(beta)
        return cls(VAR, beta=float(beta))

    @classmethod
    def piecewise(cls, breakpoints: Sequence[float], densities: Sequence[float]) -> "WeightMeasure":
        """Piecewise-constant density ``psi'`` on the intervals between breakpoints."""
        b = tuple(float(x) for x in breakpoints)
        d = tuple(float(x) for x in densities)
        if len(b) < 2 or b[0] != 0.0 or b[-1] != 1.0:
            raise ValueError("breakpoints must start at 0 and end at 1")
        if any(hi <= lo for lo, hi in zip(b, b[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if len(d) != len(b) - 1:
            raise ValueError("need one density per interval")
        if any(x < 0 for x in d):
            raise ValueError("densities must be nonnegative")
        mass = math.fsum(x * (hi - lo) for x, lo, hi in zip(d, b, b[1:]))
        if abs(mass - 1.0) > 1e-12:
            raise ValueError(f"densities integrate to {mass!r}, expected 1")
        return cls(PIECEWISE, breakpoints=b, densities=d)

    @classmethod
    def from_name(cls, name: str, beta: float | None = None) -> "WeightMeasure":
        name = name.lower()
        if name == MEAN:
            return cls.mean()
        if name in (CVAR, VAR):
            if beta is None:
                raise ValueError(f"{name} needs beta")
            return cls.cvar(beta) if name == CVAR else cls.var(beta)
        raise ValueError(f"unknown measure {name!r}")

    @property
    def has_density(self) -> bool:
        return self.kind != VAR

    def cdf(self, p: np.ndarray | float) -> np.ndarray:
        """``psi(p)``, the weight assigned to quantile levels in ``[0, p]``."""
        p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
        if self.kind == MEAN:
            return p
        if self.kind == CVAR:
            return np.maximum(p - self.beta, 0.0) / (1.0 - self.beta)
        if self.kind == VAR:
            # point mass at beta; right-continuous
            return (p >= self.beta).astype(float)
        b = np.asarray(self.breakpoints)
        d = np.asarray(self.densities)
        cum = np.r_[0.0, np.cumsum(d * np.diff(b))]
        k = np.clip(np.searchsorted(b, p, side="right") - 1, 0, d.size - 1)
        return np.minimum(cum[k] + d[k] * (p - b[k]), 1.0)

    def grid_density(self, n: int) -> np.ndarray:
        """``psi'(i/n)`` for ``i = 1..n-1`` (right-continuous at breakpoints)."""
        i = np.arange(1, n)
        if self.kind == MEAN:
            return np.ones(n - 1)
        if self.kind == CVAR:
            # i/n >= beta  <=>  i >= ceil(n beta); matches the winsorising index
            k = ceil_index(n, self.beta)
            return (i >= k) / (1.0 - self.beta)
        if self.kind == PIECEWISE:
            b = np.asarray(self.breakpoints)
            d = np.asarray(self.densities)
            k = np.clip(np.searchsorted(b, i / n, side="right") - 1, 0, d.size - 1)
            return d[k]
        raise ValueError("use bootstrap variance for point-mass measures")

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.beta is not None:
            out["beta"] = self.beta
        if self.kind == PIECEWISE:
            out["breakpoints"] = list(self.breakpoints)
            out["densities"] = list(self.densities)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "WeightMeasure":
        if data["kind"] == PIECEWISE:
            return cls.piecewise(data["breakpoints"], data["densities"])
        return cls.from_name(data["kind"], data.get("beta"))


def _check_beta(beta: float) -> None:
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")


@dataclass(frozen=True)
class RiskEstimate:
    point: float
    sd: float
    n: int
    ucb: float


def lstat_weights(psi: WeightMeasure, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be positive")
    if psi.kind == VAR:
        w = np.zeros(n)
        w[ceil_index(n, psi.beta) - 1] = 1.0
        return w
    grid = np.arange(n + 1) / n
    w = np.diff(psi.cdf(grid))
    return np.maximum(w, 0.0)


def estimate_risk(s: SortedSample, psi: WeightMeasure) -> float:
    if psi.kind == VAR:
        return empirical_quantile(s, psi.beta)
    return float(lstat_weights(psi, s.n) @ s.values)


def variance_general(s: SortedSample, psi: WeightMeasure) -> float:
    """Plug-in asymptotic variance of the L-statistic for measures with a density.

    With ``g_i = psi'(i/n) * (r_(i+1) - r_(i))`` the step-function double
    integral equals ``sum_ij g_i g_j (min(i, j)/n - i j / n^2)``.  That is the
    variance of ``T_J`` for ``J`` uniform on ``1..n`` with tail sums
    ``T_k = sum_{i >= k} g_i`` (``T_n = 0``), which is how it is evaluated here.
    """
    if not psi.has_density:
        raise ValueError("use bootstrap variance for point-mass measures")
    n = s.n
    if n == 1:
        return 0.0
    g = psi.grid_density(n) * np.diff(s.values)
    tails = np.r_[np.cumsum(g[::-1])[::-1], 0.0]
    return plug_in_variance(tails)


def variance_cvar(s: SortedSample, beta: float) -> float:
    """Closed form for CVaR: winsorise below the beta-quantile, scale by ``1/(1-beta)^2``."""
    _check_beta(beta)
    threshold = s.order_stat(ceil_index(s.n, beta))
    return plug_in_variance(np.maximum(s.values, threshold)) / (1.0 - beta) ** 2


def variance_var_bootstrap(
    s: SortedSample,
    beta: float,
    B: int = DEFAULT_BOOTSTRAP,
    seed: int | Sequence[int] = 0,
) -> float:
    """Bootstrap estimate of the asymptotic variance of the empirical beta-quantile.

    Returns ``n`` times the variance of ``B`` bootstrap replicates of the
    quantile. ``seed`` may be any entropy accepted by
    :class:`numpy.random.SeedSequence`.

    The ``k``-th order statistic of a resample is ``r_(T)`` with
    ``P(T <= t) = P(Binomial(n, t/n) >= k)``, so replicates are drawn from that
    law by inversion instead of materialising ``B x n`` resampled indices.
    Both give the same bootstrap distribution.
    """
    _check_beta(beta)
    if B < 2:
        raise ValueError("need at least two bootstrap resamples")
    n = s.n
    if s.values[0] == s.values[-1]:
        return 0.0
    k = ceil_index(n, beta)
    t = np.arange(1, n + 1)
    cdf = binom.sf(k - 1, n, t / n)
    cdf[-1] = 1.0
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    pos = np.searchsorted(cdf, rng.random(B), side="left")
    return n * plug_in_variance(s.values[pos])


def normal_quantile(p: float) -> float:
    return NormalDist().inv_cdf(p)


def ucb(point: float, sd: float, n: int, delta: float) -> float:
    """One-sided ``(1 - delta)`` upper bound ``point + z_{1-delta} sd / sqrt(n)``."""
    if not 0.0 < delta <= 0.5:
        raise ValueError(f"delta must lie in (0, 0.5], got {delta}")
    if sd < 0 or n < 1:
        raise ValueError("sd must be nonnegative and n positive")
    if sd == 0.0 or delta == 0.5:
        return float(point)
    return float(point + normal_quantile(1.0 - delta) * sd / math.sqrt(n))
