"""The chi distribution: law of the Euclidean norm of a standard normal k-vector.

Everything here reduces to the regularized lower incomplete gamma function
``P(s, z)``, evaluated with the usual two-regime scheme (power series below
``z = s + 1``, Lentz continued fraction for the upper tail above it).
All functions accept scalars or numpy arrays for ``r``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError

__all__ = [
    "ChiDistribution",
    "gammainc_lower",
    "chi_pdf",
    "chi_cdf",
    "chi_quantile",
    "chi_partial_moment",
    "chi_partial_expectation",
    "chi_mean",
]

_EPS = float(np.finfo(np.float64).eps)
_TINY = 1e-300
_MAX_TERMS = 1000


def _series(s: float, z: np.ndarray) -> np.ndarray:
    # P(s, z) = z^s e^-z / Gamma(s+1) * sum_n z^n / ((s+1)...(s+n))
    term = np.ones_like(z)
    total = np.ones_like(z)
    ap = s
    for _ in range(_MAX_TERMS):
        ap += 1.0
        term = term * z / ap
        total += term
        if np.all(np.abs(term) <= np.abs(total) * _EPS):
            break
    with np.errstate(divide="ignore"):
        log_pref = s * np.log(z) - z - math.lgamma(s + 1.0)
    return total * np.exp(log_pref)


def _continued_fraction(s: float, z: np.ndarray) -> np.ndarray:
    # Q(s, z) = 1 - P(s, z) by modified Lentz on the Legendre fraction
    b = z + 1.0 - s
    c = np.full_like(z, 1.0 / _TINY)
    d = 1.0 / b
    h = d.copy()
    for i in range(1, _MAX_TERMS + 1):
        an = -i * (i - s)
        b = b + 2.0
        d = an * d + b
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = b + an / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = d * c
        h = h * delta
        if np.all(np.abs(delta - 1.0) <= _EPS):
            break
    return np.exp(s * np.log(z) - z - math.lgamma(s)) * h


def gammainc_lower(s: float, z):
    """Regularized lower incomplete gamma ``P(s, z) = gamma(s, z) / Gamma(s)``."""
    if s <= 0:
        raise DomainError(f"shape parameter must be positive, got {s}")
    z_arr = np.asarray(z, dtype=np.float64)
    if np.any(z_arr < 0):
        raise DomainError("incomplete gamma argument must be non-negative")
    flat = z_arr.ravel()
    out = np.zeros_like(flat)
    low = (flat > 0) & (flat < s + 1.0)
    high = (flat >= s + 1.0) & np.isfinite(flat)
    out[np.isposinf(flat)] = 1.0
    if np.any(low):
        out[low] = _series(s, flat[low])
    if np.any(high):
        out[high] = 1.0 - _continued_fraction(s, flat[high])
    out = np.clip(out, 0.0, 1.0).reshape(z_arr.shape)
    return float(out) if out.ndim == 0 else out


def _check_k(k: int) -> int:
    if int(k) != k or k < 1:
        raise DomainError(f"degrees of freedom must be a positive integer, got {k}")
    return int(k)


def _check_r(r) -> np.ndarray:
    r_arr = np.asarray(r, dtype=np.float64)
    if np.any(r_arr < 0) or np.any(np.isnan(r_arr)):
        raise DomainError("chi distribution is supported on r >= 0")
    return r_arr


def _scalar_or_array(x: np.ndarray):
    return float(x) if np.ndim(x) == 0 else x


def chi_pdf(r, k: int):
    k = _check_k(k)
    r_arr = _check_r(r)
    log_norm = (1.0 - k / 2.0) * math.log(2.0) - math.lgamma(k / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_body = (k - 1) * np.log(r_arr) - 0.5 * r_arr * r_arr
    out = np.exp(log_norm + log_body)
    if k == 1:
        # r^0 = 1 at the origin
        out = np.where(r_arr == 0.0, math.exp(log_norm), out)
    return _scalar_or_array(out)


def chi_cdf(r, k: int):
    k = _check_k(k)
    r_arr = _check_r(r)
    return gammainc_lower(k / 2.0, 0.5 * r_arr * r_arr)


def chi_quantile(p: float, k: int, hi: float = 64.0) -> float:
    """Smallest ``r`` with ``chi_cdf(r, k) = p``.

    Bisection on ``[0, hi]`` down to 1e-12, then two Newton steps.
    """
    k = _check_k(k)
    if not (0.0 <= p < 1.0):
        raise DomainError(f"quantile probability must lie in [0, 1), got {p}")
    if p == 0.0:
        return 0.0
    lo = 0.0
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if chi_cdf(mid, k) < p:
            lo = mid
        else:
            hi = mid
    r = 0.5 * (lo + hi)
    for _ in range(2):
        dens = chi_pdf(r, k)
        if dens <= 0.0:
            break
        step = (chi_cdf(r, k) - p) / dens
        if not math.isfinite(step) or r - step < 0.0:
            break
        r -= step
    return r


def chi_partial_moment(lo, hi, k: int, order: int):
    """``integral_lo^hi t^order f(t) dt`` in closed form.

    Uses ``t^m f_k(t) = 2^(m/2) Gamma((k+m)/2) / Gamma(k/2) f_{k+m}(t)``.
    """
    k = _check_k(k)
    lo_arr = _check_r(lo)
    hi_arr = _check_r(hi)
    if np.any(lo_arr > hi_arr):
        raise DomainError("partial moment needs lo <= hi")
    s = (k + order) / 2.0
    factor = math.exp(0.5 * order * math.log(2.0) + math.lgamma(s) - math.lgamma(k / 2.0))
    upper = gammainc_lower(s, 0.5 * hi_arr * hi_arr)
    lower = gammainc_lower(s, 0.5 * lo_arr * lo_arr)
    out = factor * (np.asarray(upper) - np.asarray(lower))
    return _scalar_or_array(np.where(lo_arr == hi_arr, 0.0, out))


def chi_partial_expectation(lo, hi, k: int):
    """``integral_lo^hi t f(t) dt``; ``hi`` may be ``inf``."""
    return chi_partial_moment(lo, hi, k, 1)


def chi_mean(k: int) -> float:
    k = _check_k(k)
    return math.sqrt(2.0) * math.exp(math.lgamma((k + 1) / 2.0) - math.lgamma(k / 2.0))


class ChiDistribution:
    """Thin convenience wrapper binding the degrees of freedom."""

    def __init__(self, k: int):
        self.k = _check_k(k)

    def pdf(self, r):
        return chi_pdf(r, self.k)

    def cdf(self, r):
        return chi_cdf(r, self.k)

    def quantile(self, p: float) -> float:
        return chi_quantile(p, self.k)

    def partial_expectation(self, lo, hi):
        return chi_partial_expectation(lo, hi, self.k)

    def mean(self) -> float:
        return chi_mean(self.k)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.sqrt(rng.chisquare(self.k, size=n))

    def __repr__(self) -> str:
        return f"ChiDistribution(k={self.k})"
