"""Finite-sample upper confidence envelopes for the quantile function.

Two constructions are provided:

* DKW: ``q+_p = r_(ceil(n (p + eps)))`` with ``eps = sqrt(log(2/delta) / 2n)``.
* Berk-Jones: ``q+_p = r_(i)`` for ``p in (s_{i-1}, s_i]`` where
  ``s_i = G^{-1}_{i, n-i+1}(s_delta)`` and ``G_{a,b}`` is the Beta(a, b) CDF.
  The threshold ``s_delta`` is the largest ``s`` with
  ``P(G_{i,n-i+1}(U_(i)) >= s for all i) >= 1 - delta``.

Integrating an envelope against ``dpsi`` gives a distribution-free UCB for
the distortion risk ``R_psi``.
"""

from __future__ import annotations

import functools
import math
import threading
from dataclasses import dataclass
from typing import Sequence

import gmpy2
import numpy as np
from scipy.special import gammaln

from .empirical import SortedSample
from .risk_measures import VAR, WeightMeasure

__all__ = [
    "Envelope",
    "PrecisionError",
    "beta_cdf",
    "beta_inverse",
    "bj_envelope",
    "bj_levels",
    "bj_threshold",
    "dkw_envelope",
    "dkw_epsilon",
    "envelope_risk_ucb",
    "uniform_order_noncrossing",
]


class PrecisionError(ArithmeticError):
    """Raised when the crossing recursion would need an unreasonable working precision."""


# ---------------------------------------------------------------------------
# Regularized incomplete beta function

_CF_TINY = 1e-300
_CF_EPS = 1e-16
_CF_MAX_ITER = 20_000


def _beta_cf(a: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Continued fraction for I_x(a, b) (modified Lentz), vectorised with masks."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _CF_TINY, _CF_TINY, d)
    d = 1.0 / d
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)
    for m in range(1, _CF_MAX_ITER + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        aa_, qab_, qap_, qam_, x_ = a[idx], qab[idx], qap[idx], qam[idx], x[idx]
        c_, d_, h_ = c[idx], d[idx], h[idx]
        m2 = 2 * m
        num = m * (b[idx] - m) * x_ / ((qam_ + m2) * (aa_ + m2))
        d_ = 1.0 + num * d_
        d_ = np.where(np.abs(d_) < _CF_TINY, _CF_TINY, d_)
        c_ = 1.0 + num / c_
        c_ = np.where(np.abs(c_) < _CF_TINY, _CF_TINY, c_)
        d_ = 1.0 / d_
        h_ = h_ * d_ * c_
        num = -(aa_ + m) * (qab_ + m) * x_ / ((aa_ + m2) * (qap_ + m2))
        d_ = 1.0 + num * d_
        d_ = np.where(np.abs(d_) < _CF_TINY, _CF_TINY, d_)
        c_ = 1.0 + num / c_
        c_ = np.where(np.abs(c_) < _CF_TINY, _CF_TINY, c_)
        d_ = 1.0 / d_
        delta = d_ * c_
        h_ = h_ * delta
        c[idx], d[idx], h[idx] = c_, d_, h_
        active[idx] = np.abs(delta - 1.0) > _CF_EPS
    else:
        raise ArithmeticError("incomplete beta continued fraction did not converge")
    return h


def beta_cdf(x, a, b):
    """Regularized incomplete beta ``I_x(a, b)``; broadcasts over its arguments."""
    x, a, b = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, a, b)))
    scalar = x.ndim == 0
    x, a, b = (np.atleast_1d(v).astype(float).copy() for v in (x, a, b))
    if np.any((x < 0) | (x > 1) | np.isnan(x)):
        raise ValueError("x must lie in [0, 1]")
    if np.any((a <= 0) | (b <= 0)):
        raise ValueError("shape parameters must be positive")
    out = np.where(x >= 1.0, 1.0, 0.0)
    inner = (x > 0) & (x < 1)
    if inner.any():
        xi, ai, bi = x[inner], a[inner], b[inner]
        log_front = (
            ai * np.log(xi) + bi * np.log1p(-xi) - (gammaln(ai) + gammaln(bi) - gammaln(ai + bi))
        )
        front = np.exp(log_front)
        direct = xi < (ai + 1.0) / (ai + bi + 2.0)
        res = np.empty_like(xi)
        if direct.any():
            res[direct] = front[direct] * _beta_cf(ai[direct], bi[direct], xi[direct]) / ai[direct]
        flip = ~direct
        if flip.any():
            res[flip] = 1.0 - front[flip] * _beta_cf(bi[flip], ai[flip], 1.0 - xi[flip]) / bi[flip]
        out[inner] = np.clip(res, 0.0, 1.0)
    return float(out[0]) if scalar else out


_ONE_BITS = np.float64(1.0).view(np.int64)


def beta_inverse(p, a, b, tol: float = 1e-10):
    """Inverse of :func:`beta_cdf` in ``x`` by bisection on ``[0, 1]``.

    The bisection runs over the bit patterns of nonnegative doubles, which are
    ordered like the values themselves, so it resolves the root down to
    adjacent floats even where the density is very steep near 0.
    """
    p, a, b = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (p, a, b)))
    scalar = p.ndim == 0
    p, a, b = (np.atleast_1d(v).astype(float).copy() for v in (p, a, b))
    if np.any((p < 0) | (p > 1) | np.isnan(p)):
        raise ValueError("p must lie in [0, 1]")
    out = np.where(p >= 1.0, 1.0, 0.0)
    todo = (p > 0) & (p < 1)
    if todo.any():
        pt, at, bt = p[todo], a[todo], b[todo]
        lo = np.zeros(pt.shape, dtype=np.int64)
        hi = np.full(pt.shape, _ONE_BITS, dtype=np.int64)
        for _ in range(64):
            open_ = hi - lo > 1
            if not open_.any():
                break
            mid = lo + (hi - lo) // 2
            fm = beta_cdf(mid.view(np.float64), at, bt)
            below = fm < pt
            lo = np.where(open_ & below, mid, lo)
            hi = np.where(open_ & ~below, mid, hi)
        xlo, xhi = lo.view(np.float64), hi.view(np.float64)
        err_lo = np.abs(beta_cdf(xlo, at, bt) - pt)
        err_hi = np.abs(beta_cdf(xhi, at, bt) - pt)
        res = np.where(err_lo < err_hi, xlo, xhi)
        out[todo] = res
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# Boundary non-crossing probability of uniform order statistics

_MAX_BITS = 1 << 17


def _log_magnitude_bound(b: np.ndarray) -> float:
    """log of ``n! * m_n`` where ``m`` runs the recursion with all signs positive.

    ``m_n`` bounds the sum of absolute values that the alternating recursion
    touches, so it measures how many bits cancel.
    """
    n = b.size
    with np.errstate(divide="ignore"):
        logb = np.log(b)
    logfact = gammaln(np.arange(n + 2) + 1.0)
    logM = np.full(n + 1, -np.inf)
    logM[0] = 0.0
    for k in range(1, n + 1):
        j = np.arange(k)
        d = k - j
        with np.errstate(invalid="ignore"):
            terms = logfact[k] - logfact[j] - logfact[d] + d * logb[j] + logM[:k]
        terms = terms[np.isfinite(terms)]
        if terms.size:
            top = terms.max()
            logM[k] = top + math.log(np.exp(terms - top).sum())
    return float(logM[n])


def uniform_order_noncrossing(a: Sequence[float] | np.ndarray) -> float:
    """``P(U_(i) >= a_i for all i)`` for ``n`` i.i.d. uniforms.

    Uses the upper bounds ``b_i = 1 - a_{n+1-i}`` and the recursion
    ``c_k = sum_j (-1)^{k-j-1} b_{j+1}^{k-j} c_j / (k-j)!``, returning
    ``n! c_n``.  The alternating sum cancels heavily, so it is evaluated in
    binary floating point with a working precision chosen from an a-priori
    bound on the cancelled magnitude; results are accurate to about 1e-18.
    """
    a = np.asarray(a, dtype=float).ravel()
    n = a.size
    if n == 0:
        return 1.0
    if np.any((a < 0) | (a > 1) | np.isnan(a)):
        raise ValueError("boundary must lie in [0, 1]")
    if np.any(np.diff(a) < 0):
        raise ValueError("boundary must be nondecreasing")
    if a[-1] >= 1.0:
        return 0.0
    if a[-1] <= 0.0:
        return 1.0

    b_float = 1.0 - a[::-1]
    log_mag = _log_magnitude_bound(b_float)
    bits = int(math.ceil(log_mag / math.log(2) + 2 * math.log2(n + 1))) + 80
    bits = max(bits, 64)
    if bits > _MAX_BITS:
        raise PrecisionError(f"crossing recursion for n={n} needs {bits} bits")

    with gmpy2.context(gmpy2.get_context(), precision=bits):
        one = gmpy2.mpfr(1)
        bs = [one - gmpy2.mpfr(float(x)) for x in a[::-1]]
        acc = [gmpy2.mpfr(0)] * (n + 1)
        acc[0] = one
        for j in range(n):
            cj = acc[j]
            bj = bs[j]
            if cj == 0 or bj == 0:
                continue
            q = cj
            for d in range(1, n - j + 1):
                q = q * bj / d
                if d & 1:
                    acc[j + d] += q
                else:
                    acc[j + d] -= q
        result = float(acc[n] * gmpy2.fac(n))
    return min(max(result, 0.0), 1.0)


# ---------------------------------------------------------------------------
# Envelopes


@dataclass(frozen=True)
class Envelope:
    """Step-function upper envelope of the quantile function.

    ``upper_values[k-1]`` applies on ``(levels[k-1], levels[k]]``;
    ``tail_value`` applies above ``levels[-1]``.
    """

    levels: np.ndarray
    upper_values: np.ndarray
    tail_value: float

    def __post_init__(self):
        if self.levels.size != self.upper_values.size + 1 or self.levels[0] != 0.0:
            raise ValueError("levels must start at 0 and have one more entry than upper_values")

    def value_at(self, p: float | np.ndarray):
        p = np.asarray(p, dtype=float)
        k = np.searchsorted(self.levels, p, side="left")
        vals = np.r_[self.upper_values, self.tail_value]
        out = vals[np.clip(k - 1, 0, vals.size - 1)]
        out = np.where(k > self.upper_values.size, self.tail_value, out)
        return float(out) if out.ndim == 0 else out


def dkw_epsilon(n: int, delta: float) -> float:
    return math.sqrt(math.log(2.0 / delta) / (2.0 * n))


def dkw_envelope(s: SortedSample, delta: float) -> Envelope:
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    n = s.n
    eps = dkw_epsilon(n, delta)
    # ceil(n (p + eps)) = i exactly for p in (i/n - eps - 1/n, i/n - eps]
    first = math.floor(n * eps) + 1
    i = np.arange(first, n + 1)
    levels = np.r_[0.0, i / n - eps]
    if levels.size > 1 and levels[1] <= 0.0:
        levels, i = np.r_[0.0, levels[2:]], i[1:]
    return Envelope(levels, s.values[i - 1].copy(), s.hi)


_BJ_CACHE: dict[tuple[int, float], float] = {}
_BJ_LOCK = threading.Lock()


def _bj_levels(n: int, s: float) -> np.ndarray:
    i = np.arange(1, n + 1, dtype=float)
    return beta_inverse(np.full(n, s), i, n - i + 1)


def bj_threshold(n: int, delta: float, tol: float = 1e-8) -> float:
    """Largest ``s`` whose Berk-Jones boundary is respected with probability ``>= 1 - delta``.

    Cached per ``(n, delta)``; the search is bracketed by ``[delta/n, delta]``
    (Bonferroni below, the single-index event above).
    """
    if n < 1:
        raise ValueError("n must be positive")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    key = (int(n), float(delta))
    with _BJ_LOCK:
        if key in _BJ_CACHE:
            return _BJ_CACHE[key]
    if n == 1:
        s = float(delta)
    else:
        target = 1.0 - delta
        lo, hi = delta / n, delta
        if uniform_order_noncrossing(_bj_levels(n, hi)) >= target:
            lo = hi
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if uniform_order_noncrossing(_bj_levels(n, mid)) >= target:
                lo = mid
            else:
                hi = mid
        s = lo
    with _BJ_LOCK:
        _BJ_CACHE.setdefault(key, s)
    return s


@functools.lru_cache(maxsize=64)
def bj_levels(n: int, delta: float) -> np.ndarray:
    """Envelope breakpoints ``0 = s_0 < s_1 < ... < s_n`` for sample size ``n``."""
    levels = np.r_[0.0, _bj_levels(n, bj_threshold(n, delta))]
    levels.setflags(write=False)
    return levels


def bj_envelope(s: SortedSample, delta: float) -> Envelope:
    return Envelope(bj_levels(s.n, float(delta)), s.values.copy(), s.hi)


def envelope_risk_ucb(env: Envelope, psi: WeightMeasure) -> float:
    """``int_0^1 q+_p dpsi(p)`` evaluated exactly for the step envelope."""
    if psi.kind == VAR:
        return float(env.value_at(psi.beta))
    cdf = psi.cdf(env.levels)
    masses = np.diff(cdf)
    tail = 1.0 - float(cdf[-1])
    return float(masses @ env.upper_values + tail * env.tail_value)
