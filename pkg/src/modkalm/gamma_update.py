"""Amplitude posterior under a Gamma prior and complex-Gaussian observation noise.

The predicted amplitude moments are matched to a two-parameter Gamma-shaped
prior p(a) ∝ a^(2γ−1) exp(−a²/β²); conditioning on an observed noisy
amplitude y with noise power ν² then has closed-form posterior moments built
from confluent-hypergeometric ratios.  Everything here broadcasts, so a whole
frame of bins can be processed per call.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import digamma, gammaln

from .specfun import gamma_half_ratio, kummer_m_log

GAMMA_MIN = 1e-3
GAMMA_MAX = 49.0
# keep the hypergeometric argument inside the supported box; beyond it the
# estimator has already converged to its Wiener-like limit
_X_MAX = 1e12
VAR_FLOOR_REL = 1e-12


@dataclass
class GammaPrior:
    """Shape/scale pair; scalar or array-valued for batched fits."""

    gamma: np.ndarray
    beta: np.ndarray

    def amplitude_mean(self):
        return self.beta * gamma_half_ratio(self.gamma)

    def amplitude_second_moment(self):
        return self.gamma * self.beta ** 2

    def amplitude_var(self):
        return self.amplitude_second_moment() - self.amplitude_mean() ** 2


@dataclass
class SnrPair:
    """A-posteriori (zeta = y²/ν²) and a-priori (xi = E(A²)/ν²) ratios."""

    zeta: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        if np.any(self.zeta < 0) or np.any(self.xi < 0):
            raise ValueError("SNRs must be nonnegative")
        if not (np.all(np.isfinite(self.zeta)) and np.all(np.isfinite(self.xi))):
            raise ValueError("SNRs must be finite")


def _log_shape_ratio(g):
    """ln of f(γ) = Γ²(γ+½) / (γ Γ²(γ)), strictly increasing on (0, ∞)."""
    g = np.asarray(g, dtype=float)
    return 2.0 * (gammaln(g + 0.5) - gammaln(g)) - np.log(g)


_GRID_LOG_GAMMA = np.linspace(np.log(GAMMA_MIN), np.log(GAMMA_MAX), 512)
_GRID_LOG_F = _log_shape_ratio(np.exp(_GRID_LOG_GAMMA))


def _solve_gamma_vec(log_r: np.ndarray) -> np.ndarray:
    """Invert ln f(γ) = log_r: interpolated start plus Newton polish."""
    lg = np.interp(log_r, _GRID_LOG_F, _GRID_LOG_GAMMA)
    for _ in range(3):
        g = np.exp(lg)
        # d ln f / d ln γ
        slope = g * (2.0 * (digamma(g + 0.5) - digamma(g))) - 1.0
        lg = lg - (_log_shape_ratio(g) - log_r) / slope
        lg = np.clip(lg, _GRID_LOG_GAMMA[0], _GRID_LOG_GAMMA[-1])
    return np.exp(lg)


def fit_gamma_prior(mu, var, counters: dict | None = None) -> GammaPrior:
    """Moment-match the Gamma-shaped amplitude prior to (mean, variance).

    Solves Γ²(γ+½)/(γΓ²(γ)) = μ²/(μ²+σ²) for the shape, which is bracketed
    and strictly increasing; the scale follows from the second moment
    E(A²) = γβ².  The shape is clamped to [1e-3, 49] at the extremes (the
    ratio saturates there and the downstream special functions stay inside
    their supported box); clamps are counted.
    """
    scalar = np.isscalar(mu) and np.isscalar(var)
    mu = np.asarray(mu, dtype=float)
    var = np.asarray(var, dtype=float)
    if np.any(mu < 0):
        raise ValueError("mean must be nonnegative")
    if np.any(var <= 0):
        raise ValueError("variance must be positive")

    second = mu * mu + var
    with np.errstate(divide="ignore"):
        log_r = np.log(mu * mu) - np.log(second)
    lo = log_r <= _GRID_LOG_F[0]
    hi = log_r >= _GRID_LOG_F[-1]
    if counters is not None:
        n_lo, n_hi = int(np.count_nonzero(lo)), int(np.count_nonzero(hi))
        if n_lo:
            counters["gamma_clamped_low"] = counters.get("gamma_clamped_low", 0) + n_lo
        if n_hi:
            counters["gamma_clamped_high"] = counters.get("gamma_clamped_high", 0) + n_hi

    if mu.ndim == 0:
        if lo:
            g = GAMMA_MIN
        elif hi:
            g = GAMMA_MAX
        else:
            g = brentq(
                lambda t: _log_shape_ratio(t) - float(log_r),
                GAMMA_MIN,
                GAMMA_MAX,
                xtol=1e-13,
                rtol=8.9e-16,
            )
        gamma = np.asarray(g, dtype=float)
    else:
        gamma = np.empty_like(mu)
        gamma[lo] = GAMMA_MIN
        gamma[hi] = GAMMA_MAX
        mid = ~(lo | hi)
        if np.any(mid):
            gamma[mid] = _solve_gamma_vec(log_r[mid])

    beta = np.sqrt(second / gamma)
    if scalar:
        return GammaPrior(float(gamma), float(beta))
    return GammaPrior(gamma, beta)


def snr_pair(prior: GammaPrior, nu2, y) -> SnrPair:
    """Form the (a-posteriori, a-priori) SNR pair for an observation."""
    nu2 = np.asarray(nu2, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(nu2 <= 0):
        raise ValueError("noise power must be positive")
    if np.any(y < 0):
        raise ValueError("observed amplitude must be nonnegative")
    return SnrPair(y * y / nu2, prior.gamma * np.asarray(prior.beta) ** 2 / nu2)


def mdkm_posterior(prior: GammaPrior, nu2, y, counters: dict | None = None):
    """Posterior amplitude mean and variance given noisy amplitude y.

    The posterior under the Gamma-shaped prior is again of generalized-Gamma
    type tilted by a Bessel factor; its moments reduce to ratios of
    M(·;1;x) at shapes γ, γ+½, γ+1 with x = ζξ/(γ+ξ).  Evaluated in log
    space so large x cannot overflow.  The variance is the second moment
    minus the squared mean, floored at 1e-12·y² (floor hits are counted).
    A zero observation reports a zero mean with all mass in the variance.
    """
    scalar = np.isscalar(y) and np.isscalar(nu2) and np.isscalar(prior.gamma)
    gamma = np.asarray(prior.gamma, dtype=float)
    pair = snr_pair(prior, nu2, y)
    zeta, xi = np.asarray(pair.zeta), np.asarray(pair.xi)
    gamma, zeta, xi = np.broadcast_arrays(gamma, zeta, xi)
    y = np.broadcast_to(np.asarray(y, dtype=float), gamma.shape)
    nu2 = np.broadcast_to(np.asarray(nu2, dtype=float), gamma.shape)

    x = zeta * xi / (gamma + xi)
    big = x >= _X_MAX
    logm = kummer_m_log(
        np.stack([gamma, gamma + 0.5, gamma + 1.0]), 1.0, np.where(big, 0.0, x)[None]
    )
    ratio_half = np.exp(logm[1] - logm[0])
    ratio_one = np.exp(logm[2] - logm[0])
    if np.any(big):
        # beyond the box the M-ratios have converged to their leading
        # asymptotics (relative error O(1/x) ≤ 1e-12)
        half = gamma_half_ratio(gamma)
        ratio_half = np.where(big, np.sqrt(x) / half, ratio_half)
        ratio_one = np.where(big, x / gamma, ratio_one)

    # per-dimension posterior scale: β'² = β²ν²/(β²+ν²) = ν²ξ/(γ+ξ)
    scale2 = nu2 * xi / (gamma + xi)
    mean = gamma_half_ratio(gamma) * np.sqrt(scale2) * ratio_half
    second = gamma * scale2 * ratio_one

    mean = np.where(y > 0, mean, 0.0)
    var = second - mean * mean
    floor = VAR_FLOOR_REL * y * y
    low = var < floor
    if counters is not None and np.any(low):
        counters["posterior_var_floored"] = counters.get(
            "posterior_var_floored", 0
        ) + int(np.count_nonzero(low))
    var = np.maximum(var, floor)
    if scalar:
        return float(mean), float(var)
    return mean, var
