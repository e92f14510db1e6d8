"""Numerically robust special functions for the amplitude estimators.

Provides log-gamma, the half-step gamma ratio, modified Bessel functions of
the first kind, and the confluent hypergeometric function M(a;b;x).  M grows
like exp(x) and is consumed only through ratios, so it is returned in
log-magnitude form (:class:`ScaledValue` for scalars, plain log arrays for
the vectorized path) and ratios are formed by subtracting logs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special as _sp

__all__ = [
    "ScaledValue",
    "ln_gamma",
    "gamma_half_ratio",
    "bessel_i",
    "kummer_m",
    "kummer_m_log",
]

_LN10 = math.log(10.0)

# Supported parameter box for kummer_m.  The estimators call it with
# a = shape or shape +/- 1/2 (shape capped at 49) and b = 1; the box leaves
# generous headroom while refusing silent extrapolation.
_KUMMER_A_MAX = 60.0
_KUMMER_B_MAX = 60.0
_KUMMER_X_MAX = 1e12


@dataclass(frozen=True)
class ScaledValue:
    """A nonzero real stored as ``sign * exp(mantissa_log)``."""

    mantissa_log: float
    sign: int = 1

    def value(self) -> float:
        """The represented number; may overflow for huge mantissa_log."""
        return self.sign * math.exp(self.mantissa_log)


def _as_float_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def _maybe_scalar(out: np.ndarray, scalar_in: bool):
    return float(out) if scalar_in else out


def ln_gamma(x):
    """Natural log of the gamma function for positive arguments."""
    scalar = np.isscalar(x) or np.ndim(x) == 0
    arr = _as_float_array(x, "x")
    if np.any(arr <= 0):
        raise ValueError("ln_gamma requires x > 0")
    return _maybe_scalar(_sp.gammaln(arr), scalar)


def gamma_half_ratio(g):
    """Gamma(g + 1/2) / Gamma(g) for g > 0.

    Computed from log-gamma differences; for very large g the difference of
    two nearly equal logs loses precision, so an asymptotic series in 1/g
    takes over there.
    """
    scalar = np.isscalar(g) or np.ndim(g) == 0
    arr = _as_float_array(g, "g")
    if np.any(arr <= 0):
        raise ValueError("gamma_half_ratio requires g > 0")
    out = np.empty_like(arr)
    big = arr > 1e4
    small = ~big
    if np.any(small):
        gs = arr[small]
        out[small] = np.exp(_sp.gammaln(gs + 0.5) - _sp.gammaln(gs))
    if np.any(big):
        gb = arr[big]
        inv = 1.0 / gb
        out[big] = np.sqrt(gb) * (
            1.0
            + inv
            * (
                -0.125
                + inv
                * (1.0 / 128.0 + inv * (5.0 / 1024.0 + inv * (-21.0 / 32768.0)))
            )
        )
    return _maybe_scalar(out, scalar)


def bessel_i(order: int, x, scaled: bool = False):
    """Modified Bessel function I_0 or I_1; ``scaled`` gives exp(-|x|)*I."""
    if order not in (0, 1):
        raise ValueError("order must be 0 or 1")
    scalar = np.isscalar(x) or np.ndim(x) == 0
    arr = _as_float_array(x, "x")
    if order == 0:
        out = _sp.i0e(arr) if scaled else _sp.i0(arr)
    else:
        out = _sp.i1e(arr) if scaled else _sp.i1(arr)
    return _maybe_scalar(out, scalar)


def _series_switch(a: np.ndarray) -> np.ndarray:
    # Below this x the Taylor series is used; above, the large-x expansion.
    # The expansion's leading term ratio is ~a^2/x, so the cut grows with a
    # to keep its truncation error under ~1e-9.
    return np.maximum(30.0, 2.0 * (a + 1.0) ** 2)


def _log_kummer_series(a: np.ndarray, b: float, x: np.ndarray) -> np.ndarray:
    """log M(a;b;x) by the ascending series with on-the-fly rescaling.

    All terms are nonnegative for a >= 0, b > 0, x >= 0, so the sum has no
    cancellation; partial sums are rescaled before they can overflow.
    """
    n = a.size
    total = np.ones(n)
    term = np.ones(n)
    shift = np.zeros(n)
    active = np.arange(n)
    k = 0
    while active.size:
        aa = a[active]
        xa = x[active]
        t = term[active] * (aa + k) * xa / ((b + k) * (k + 1.0))
        s = total[active] + t
        big = s > 1e250
        if np.any(big):
            t = np.where(big, t * 1e-250, t)
            s = np.where(big, s * 1e-250, s)
            shift[active[big]] += 250.0 * _LN10
        term[active] = t
        total[active] = s
        k += 1
        # safe to stop once the term is negligible and the ratio is falling
        done = (t <= s * 1e-17) & ((aa + k) * xa < 0.9 * (b + k) * (k + 1.0))
        if np.any(done):
            active = active[~done]
        if k > 200000:
            raise RuntimeError("kummer series failed to converge")
    return np.log(total) + shift


def _log_kummer_asymptotic(a: np.ndarray, b: float, x: np.ndarray) -> np.ndarray:
    """log M(a;b;x) from the exponentially dominant large-x expansion."""
    n = a.size
    s = np.ones(n)
    c = np.ones(n)
    prev = np.ones(n)
    done = np.zeros(n, dtype=bool)
    for k in range(80):
        c = c * (b - a + k) * (1.0 - a + k) / ((k + 1.0) * x)
        mag = np.abs(c)
        # stop before terms start growing (divergent tail) or once negligible
        done |= (mag > prev) | (mag <= np.abs(s) * 1e-17)
        s = np.where(done, s, s + c)
        prev = mag
        if done.all():
            break
    s = np.maximum(s, 1e-300)
    return _sp.gammaln(b) - _sp.gammaln(a) + x + (a - b) * np.log(x) + np.log(s)


def kummer_m_log(a, b: float, x) -> np.ndarray:
    """Vectorized log of M(a;b;x) for a >= 0, b > 0, x >= 0.

    ``a`` and ``x`` broadcast; ``b`` is a scalar shared by the batch.  The
    result is always the log of a value >= 1, finite for arguments inside
    the supported box.
    """
    a_arr, x_arr = np.broadcast_arrays(
        _as_float_array(a, "a"), _as_float_array(x, "x")
    )
    b = float(b)
    if not (0.0 < b <= _KUMMER_B_MAX):
        raise ValueError(f"b must be in (0, {_KUMMER_B_MAX}]")
    if np.any(a_arr < 0) or np.any(a_arr > _KUMMER_A_MAX):
        raise ValueError(f"a must be in [0, {_KUMMER_A_MAX}]")
    if np.any(x_arr < 0) or np.any(x_arr > _KUMMER_X_MAX):
        raise ValueError(f"x must be in [0, {_KUMMER_X_MAX}]")
    a_flat = a_arr.ravel()
    x_flat = x_arr.ravel()
    out = np.zeros_like(a_flat)
    # M(0;b;x) = 1 exactly; the large-x expansion divides by Gamma(a), so
    # route a == 0 around both branches.
    use_series = (x_flat <= _series_switch(a_flat)) & (a_flat > 0)
    if np.any(use_series):
        out[use_series] = _log_kummer_series(
            a_flat[use_series], b, x_flat[use_series]
        )
    use_asym = ~use_series & (a_flat > 0)
    if np.any(use_asym):
        out[use_asym] = _log_kummer_asymptotic(
            a_flat[use_asym], b, x_flat[use_asym]
        )
    return out.reshape(a_arr.shape)


def kummer_m(a: float, b: float, x: float) -> ScaledValue:
    """Confluent hypergeometric function M(a;b;x) in scaled form."""
    log_val = kummer_m_log(float(a), float(b), float(x))
    return ScaledValue(mantissa_log=float(log_val), sign=1)
