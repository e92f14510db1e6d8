"""State-space machinery for per-bin amplitude tracking.

The state vector stacks the last ``p`` speech amplitudes on top of the last
``q`` noise amplitudes.  Prediction runs both linear-prediction models one
step forward; the Bayesian update (supplied externally as posterior moments
of the current speech/noise pair) is folded back into the full state through
the conditional-Gaussian transform.

All operations accept an optional leading batch axis on ``a`` and ``P`` so a
whole frame of frequency bins can be stepped at once; the maths per slice is
identical to the scalar case.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lpc import ModulationLpcModel

# eigenvalue below which P is considered indefinite and gets re-projected
_PSD_TOL = 1e-10
# condition number above which the 2x2 prior covariance gets regularized
_COND_LIMIT = 1e12
_RIDGE = 1e-8


@dataclass
class KalmanState:
    """Stacked amplitude state: ``a[..., :p]`` speech lags, ``a[..., p:]`` noise."""

    a: np.ndarray
    P: np.ndarray
    p: int
    q: int

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        n = self.p + self.q
        if self.p < 1 or self.q < 0:
            raise ValueError("need p >= 1 and q >= 0")
        if self.a.shape[-1] != n:
            raise ValueError(f"state vector has {self.a.shape[-1]} entries, expected {n}")
        if self.P.shape[-2:] != (n, n):
            raise ValueError(f"covariance trailing shape {self.P.shape[-2:]} != ({n}, {n})")

    @property
    def dim(self) -> int:
        return self.p + self.q

    def picked(self) -> np.ndarray:
        """Indices of the current speech / noise amplitudes inside ``a``."""
        if self.q:
            return np.array([0, self.p])
        return np.array([0])


@dataclass
class MomentPair:
    """Mean and covariance of the current (speech, noise) amplitude pair.

    ``mu`` has trailing length 1 (speech only, stationary-noise mode) or 2;
    ``sigma`` is the matching 1x1 or 2x2 covariance.
    """

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        d = self.mu.shape[-1]
        if d not in (1, 2):
            raise ValueError("moment pair must cover 1 or 2 amplitudes")
        if self.sigma.shape[-2:] != (d, d):
            raise ValueError("sigma shape does not match mu")


def build_transition(speech: ModulationLpcModel, noise: ModulationLpcModel):
    """Assemble (F, Q, D) from the two prediction models.

    F is block-diagonal in the two companion matrices, Q holds the residual
    variances and D picks out the entries that receive fresh excitation (the
    current speech amplitude and, when ``noise.order > 0``, the current noise
    amplitude).  An order-0 noise model yields the speech-only layout.
    """
    p, q = speech.order, noise.order
    if p < 1:
        raise ValueError("speech model must have order >= 1")
    n = p + q
    F = np.zeros((n, n))
    F[0, :p] = -speech.coeffs
    F[1:p, : p - 1] += np.eye(p - 1)
    if q:
        F[p, p:] = -noise.coeffs
        F[p + 1 :, p : n - 1] += np.eye(q - 1)
        Q = np.diag([speech.residual_var, noise.residual_var])
        D = np.zeros((n, 2))
        D[0, 0] = 1.0
        D[p, 1] = 1.0
    else:
        Q = np.array([[speech.residual_var]])
        D = np.zeros((n, 1))
        D[0, 0] = 1.0
    return F, Q, D


def predict(state: KalmanState, F, Q, D, counters: dict | None = None):
    """One-step time update; returns the predicted state and prior moments.

    Negative predicted amplitudes are clamped to zero in the returned
    moments (the raw state is left untouched); each clamp bumps
    ``counters["prior_mean_clamped"]``.
    """
    F = np.asarray(F, dtype=float)
    Q = np.asarray(Q, dtype=float)
    D = np.asarray(D, dtype=float)
    n = state.dim
    if F.shape[-2:] != (n, n):
        raise ValueError(f"transition trailing shape {F.shape[-2:]} != ({n}, {n})")
    if D.shape[0] != n or Q.shape[-1] != D.shape[1]:
        raise ValueError("D/Q shapes inconsistent with the state")

    a = np.einsum("...ij,...j->...i", F, state.a)
    Ft = np.swapaxes(F, -1, -2)
    P = F @ state.P @ Ft + D @ Q @ np.swapaxes(D, -1, -2)
    P = 0.5 * (P + np.swapaxes(P, -1, -2))

    sel = state.picked()
    mu_raw = a[..., sel]
    clamped = int(np.count_nonzero(mu_raw < 0.0))
    if counters is not None and clamped:
        counters["prior_mean_clamped"] = counters.get("prior_mean_clamped", 0) + clamped
    mu = np.maximum(mu_raw, 0.0)
    Sigma = P[..., sel, :][..., :, sel]
    return KalmanState(a, P, state.p, state.q), MomentPair(mu, Sigma)


def update(
    prior_state: KalmanState,
    prior: MomentPair,
    posterior: MomentPair,
    counters: dict | None = None,
) -> KalmanState:
    """Fold posterior moments of the picked amplitudes back into the state.

    Conditional-Gaussian identity: with the state split into the picked pair
    u and the remainder v, the prior couples them through G = Cov(v,u) Σ⁻¹.
    Replacing the marginal of u by the supplied posterior moves the joint to

        a + J (μ_post − u),   P + J (Σ_post − Σ) Jᵀ,

    where J stacks the identity on the picked rows and G on the rest.  The
    result is symmetrized and, if round-off made it indefinite, projected
    back onto the PSD cone.
    """
    a, P = prior_state.a, prior_state.P
    sel = prior_state.picked()
    d = sel.size
    if posterior.mu.shape[-1] != d or prior.mu.shape[-1] != d:
        raise ValueError("moment dimension does not match the state layout")
    rest = np.setdiff1d(np.arange(prior_state.dim), sel)

    Sigma = prior.sigma
    if np.any(np.linalg.cond(Sigma) > _COND_LIMIT):
        tr = np.trace(Sigma, axis1=-2, axis2=-1)
        Sigma = Sigma + (_RIDGE * tr / d)[..., None, None] * np.eye(d)
        if counters is not None:
            counters["sigma_regularized"] = counters.get("sigma_regularized", 0) + 1

    M = P[..., rest, :][..., :, sel]
    # G = M Σ⁻¹ via a transposed solve so no explicit inverse is formed
    G = np.swapaxes(np.linalg.solve(np.swapaxes(Sigma, -1, -2), np.swapaxes(M, -1, -2)), -1, -2)

    delta_mu = posterior.mu - a[..., sel]
    a_new = a.copy()
    a_new[..., sel] += delta_mu
    a_new[..., rest] += np.einsum("...ij,...j->...i", G, delta_mu)

    dS = posterior.sigma - prior.sigma
    Gt = np.swapaxes(G, -1, -2)
    P_new = P.copy()
    P_new[..., sel[:, None], sel[None, :]] += dS
    cross = G @ dS
    P_new[..., rest[:, None], sel[None, :]] += cross
    P_new[..., sel[:, None], rest[None, :]] += np.swapaxes(cross, -1, -2)
    P_new[..., rest[:, None], rest[None, :]] += cross @ Gt

    P_new = 0.5 * (P_new + np.swapaxes(P_new, -1, -2))
    eigmin = np.min(np.linalg.eigvalsh(P_new))
    if eigmin < -_PSD_TOL:
        P_new = psd_project(P_new)
        if counters is not None:
            counters["psd_projected"] = counters.get("psd_projected", 0) + 1
    return KalmanState(a_new, P_new, prior_state.p, prior_state.q)


def psd_project(P: np.ndarray) -> np.ndarray:
    """Nearest (Frobenius) symmetric PSD matrix: clamp negative eigenvalues."""
    P = 0.5 * (P + np.swapaxes(P, -1, -2))
    w, V = np.linalg.eigh(P)
    w = np.maximum(w, 0.0)
    out = (V * w[..., None, :]) @ np.swapaxes(V, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))
