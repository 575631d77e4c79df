"""Truncated (type II) fractional operators and fractional-lag polynomial algebra.

All operators assume zero pre-sample values, so every expansion below is a
finite convolution and every inverse exists exactly. Weight recursions are
evaluated sequentially in double precision; no gamma-function shortcuts.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

__all__ = [
    "pi_coeffs",
    "phi_int_coeffs",
    "fracdiff",
    "frac_ar_expand",
    "invert_ar",
    "varsigma_coeffs",
]


def _check_dn(d: float, n: int) -> None:
    if not np.isfinite(d):
        raise ValueError(f"integration order must be finite, got {d!r}")
    if n < 1:
        raise ValueError(f"need at least one coefficient, got n={n}")


def pi_coeffs(d: float, n: int) -> np.ndarray:
    """Weights of the truncated fractional difference (1-L)^d_+ up to lag n-1.

    pi_0 = 1, pi_j = ((j-d-1)/j) * pi_{j-1}. Negative d gives the weights of
    the inverse operator (1-L)^{-|d|}_+.
    """
    _check_dn(d, n)
    out = np.empty(n)
    out[0] = 1.0
    if n > 1:
        j = np.arange(1, n)
        out[1:] = np.cumprod((j - d - 1.0) / j)
    return out


def phi_int_coeffs(d: float, n: int) -> np.ndarray:
    """Wold weights of the truncated fractional integral (1-L)^{-d}_+.

    phi_0 = 1, phi_j = ((j+d-1)/j) * phi_{j-1}; equals pi_coeffs(-d, n).
    """
    _check_dn(d, n)
    out = np.empty(n)
    out[0] = 1.0
    if n > 1:
        j = np.arange(1, n)
        out[1:] = np.cumprod((j + d - 1.0) / j)
    return out


def fracdiff(series, d: float) -> np.ndarray:
    """Apply the truncated fractional difference of order d to a series.

    Pre-sample values are treated as zero, so the output has the same length
    as the input and fracdiff(fracdiff(x, d), -d) recovers x exactly.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("series must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    n = x.size
    return np.convolve(pi_coeffs(d, n), x)[:n]


def invert_ar(delta, n: int) -> np.ndarray:
    """MA weights omega with (delta * omega)_j = 1{j=0} for j < n.

    `delta` is a lag polynomial with delta[0] == 1.
    """
    delta = np.asarray(delta, dtype=float)
    if delta.size == 0 or delta[0] != 1.0:
        raise ValueError("delta must be a lag polynomial with leading 1")
    if n < 1:
        raise ValueError("n must be >= 1")
    omega = np.zeros(n)
    omega[0] = 1.0
    deg = delta.size - 1
    for j in range(1, n):
        hi = min(j, deg)
        if hi > 0:
            omega[j] = -(delta[1 : hi + 1] @ omega[j - hi : j][::-1])
    return omega


@lru_cache(maxsize=512)
def _varsigma_cached(d: float, k: int, n: int) -> np.ndarray:
    base = np.zeros(n)
    base[1:] = -pi_coeffs(d, n)[1:]  # L_d = 1 - (1-L)^d_+; lag-0 weight is 0
    out = base
    for _ in range(k - 1):
        out = np.convolve(out, base)[:n]
    out.setflags(write=False)
    return out


def varsigma_coeffs(d: float, k: int, n: int) -> np.ndarray:
    """Standard-lag weights of the k-th power of the fractional lag operator.

    L_d^k = (1 - (1-L)^d_+)^k = sum_i varsigma_{k,i}(d) L^i with
    varsigma_{k,i} = 0 for i < k. Computed by repeated truncated
    self-convolution of the k=1 weights; results are cached per (d, k, n)
    behind a lock-free read path (lru_cache serialises writers).
    """
    _check_dn(d, n)
    if k < 1:
        raise ValueError("k must be >= 1; the k=0 constant term is the caller's")
    return _varsigma_cached(float(d), int(k), int(n))


def frac_ar_expand(d: float, ar_poly, l: int) -> np.ndarray:
    """Standard-lag AR weights of the fractional-lag polynomial phi(L_d).

    `ar_poly` is (1, phi_1, ..., phi_p) for phi(z) = 1 - phi_1 z - ... -
    phi_p z^p. Returns delta_0..delta_l with delta_0 = 1 such that
    phi(L_d) z_t = sum_j delta_j z_{t-j}.
    """
    poly = np.asarray(ar_poly, dtype=float)
    if poly.size == 0 or poly[0] != 1.0:
        raise ValueError("ar_poly must start with 1")
    p = poly.size - 1
    if l < p:
        raise ValueError(f"truncation lag l={l} must be >= AR order p={p}")
    if d <= 0:
        raise ValueError("fractional lag operator requires d > 0")
    delta = np.zeros(l + 1)
    delta[0] = 1.0
    for i in range(1, p + 1):
        delta = delta - poly[i] * varsigma_coeffs(d, i, l + 1)
    return delta
