"""Ring-of-Gaussians amplitude posterior for jointly tracked speech and noise.

A predicted (mean, variance) amplitude pair with uniform phase is approximated
by a mixture of equal-weight complex Gaussians whose centres sit on a circle:
the amplitude marginal is near-Rician and the phase marginal uniform.  The
speech ring sits at the origin, the noise ring at the observed coefficient;
multiplying the two mixtures and taking moments of |S| and |S − z| gives the
joint posterior of the two amplitudes, including their covariance.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .kalman import MomentPair, psd_project
from .specfun import gamma_half_ratio

# mean/std ratio of a Rayleigh amplitude: below this no ring is identifiable
RAYLEIGH_GATE = float(np.sqrt(np.pi / (4.0 - np.pi)))
DEFAULT_RING_CAP = 64
# product components lighter than this fraction of the heaviest are dropped
_WEIGHT_PRUNE = 1e-12


@dataclass(frozen=True)
class NakagamiParams:
    m: float
    Omega: float


@dataclass(frozen=True)
class RicianParams:
    alpha: float
    delta2: float


@dataclass
class GaussringModel:
    """Equal-weight circular mixture; ``var`` is the total complex variance
    E|v − mean|² shared by every component."""

    G: int
    means: np.ndarray
    var: float
    center: complex
    fallback: bool

    @property
    def weight(self) -> float:
        return 1.0 / self.G


@dataclass
class SquaredMoments:
    """First/second moments of (|S|², |S−z|²) for one product component."""

    mu_sq: np.ndarray
    sigma_sq: np.ndarray

    @property
    def rho(self) -> float:
        denom = np.sqrt(self.sigma_sq[0, 0] * self.sigma_sq[1, 1])
        return float(self.sigma_sq[0, 1] / denom) if denom > 0 else 0.0


_unit_rings: dict[int, np.ndarray] = {}


def _unit_ring(G: int) -> np.ndarray:
    ring = _unit_rings.get(G)
    if ring is None:
        ring = np.exp(2j * np.pi * np.arange(G) / G)
        _unit_rings[G] = ring
    return ring


def nakagami_from_moments(mu, var) -> NakagamiParams:
    """Shape/spread from amplitude mean and variance (lower-bound match)."""
    if var <= 0:
        raise ValueError("variance must be positive")
    if mu < 0:
        raise ValueError("mean must be nonnegative")
    Omega = mu * mu + var
    return NakagamiParams(m=Omega / (4.0 * var), Omega=Omega)


def rician_from_nakagami(p: NakagamiParams) -> RicianParams:
    """Ring radius and per-dimension variance preserving the second moment."""
    if p.m <= 1.0:
        raise ValueError("Rician match needs m > 1; use the Rayleigh fallback")
    alpha2 = p.Omega * np.sqrt(1.0 - 1.0 / p.m)
    return RicianParams(alpha=float(np.sqrt(alpha2)), delta2=0.5 * (p.Omega - alpha2))


def build_ring(mu, var, center: complex = 0j, cap: int = DEFAULT_RING_CAP,
               counters: dict | None = None) -> GaussringModel:
    """Ring mixture matching the amplitude moments (mu, var) about ``center``.

    Centres are spaced roughly two component-sigmas apart, G = ⌈πμ/σ⌉.  When
    G exceeds ``cap`` the component variance is widened so the capped ring
    still overlaps itself.  Ratios below the Rayleigh gate collapse to one
    Gaussian matching E(A²).
    """
    if var <= 0:
        raise ValueError("variance must be positive")
    if mu < 0:
        raise ValueError("mean must be nonnegative")
    sigma = np.sqrt(var)
    if mu / sigma < RAYLEIGH_GATE:
        Omega = mu * mu + var
        return GaussringModel(
            G=1, means=np.array([center], dtype=complex), var=float(Omega),
            center=complex(center), fallback=True,
        )
    rice = rician_from_nakagami(nakagami_from_moments(mu, var))
    G = int(np.ceil(np.pi * mu / sigma))
    delta = 2.0 * rice.delta2
    if G > cap:
        G = cap
        # keep adjacent centres ~2 effective sigmas apart: half the chord
        # length becomes the per-dimension deviation
        half_chord2 = (rice.alpha * np.sin(np.pi / G)) ** 2
        delta = max(delta, 2.0 * half_chord2)
        if counters is not None:
            counters["ring_capped"] = counters.get("ring_capped", 0) + 1
    means = center + rice.alpha * _unit_ring(G)
    return GaussringModel(G=G, means=means, var=float(delta),
                          center=complex(center), fallback=False)


def _product_arrays(speech: GaussringModel, noise: GaussringModel):
    """Pairwise Gaussian products: normalized weights, means, shared variance."""
    dsum = speech.var + noise.var
    dprod = speech.var * noise.var / dsum
    diff = speech.means[:, None] - noise.means[None, :]
    with np.errstate(over="ignore"):  # huge separations legitimately give -inf
        logw = -np.abs(diff) ** 2 / dsum - np.log(np.pi * dsum) - np.log(speech.G * noise.G)
    logw = logw.ravel()
    top = np.max(logw)
    if not np.isfinite(top):
        warnings.warn("all product weights underflowed; using uniform weights")
        w = np.full(logw.size, 1.0 / logw.size)
    else:
        w = np.exp(logw - top)
        w /= w.sum()
    means = (dprod * (speech.means[:, None] / speech.var + noise.means[None, :] / noise.var)).ravel()
    return w, means, dprod


def product_components(speech: GaussringModel, noise: GaussringModel):
    """All pairwise products as (weight, mean, var) triples, weights summing to 1."""
    w, means, dprod = _product_arrays(speech, noise)
    return [(float(wi), complex(oi), float(dprod)) for wi, oi in zip(w, means)]


def squared_moments(o: complex, delta: float, z: complex) -> SquaredMoments:
    """Moments of the squared amplitudes of S and S−z for S ~ CN(o, delta).

    The pair (S, S−z) is perfectly correlated, so its 2x2 complex covariance
    has every entry equal to delta; squaring then gives
    Cov(|u_i|², |u_j|²) = |Σ_ij|² + 2 Re(Σ_ij ū_i u_j).
    """
    if delta <= 0:
        raise ValueError("component variance must be positive")
    mu = np.array([o, o - z], dtype=complex)
    a2 = np.abs(mu) ** 2
    mu_sq = delta + a2
    s11 = delta * delta + 2.0 * delta * a2[0]
    s22 = delta * delta + 2.0 * delta * a2[1]
    s12 = delta * delta + 2.0 * delta * float(np.real(mu[0] * np.conj(mu[1])))
    return SquaredMoments(
        mu_sq=mu_sq, sigma_sq=np.array([[s11, s12], [s12, s22]])
    )


def component_amplitude_moments(sq: SquaredMoments):
    """Amplitude mean vector and covariance implied by squared-moment fits.

    Each squared amplitude is matched to a Nakagami shape m = Ω²/σ²_sq whose
    amplitude mean Γ(m+½)/Γ(m)·√(Ω/m) and variance Ω − mean² are exact; the
    amplitude covariance reuses the squared-domain correlation.
    """
    Omega = np.asarray(sq.mu_sq, dtype=float)
    s = np.diag(sq.sigma_sq).copy()
    mean = np.empty(2)
    var = np.empty(2)
    for i in range(2):
        if s[i] <= 0:
            mean[i] = np.sqrt(Omega[i])
            var[i] = 0.0
        else:
            m = Omega[i] ** 2 / s[i]
            mean[i] = gamma_half_ratio(m) * np.sqrt(Omega[i] / m)
            var[i] = Omega[i] - mean[i] ** 2
    omega = sq.rho * np.sqrt(var[0] * var[1])
    return mean, np.array([[var[0], omega], [omega, var[1]]])


def mdkr_cell(
    mu_speech: float,
    var_speech: float,
    mu_noise: float,
    var_noise: float,
    z: complex,
    cap: int = DEFAULT_RING_CAP,
    counters: dict | None = None,
    info: dict | None = None,
):
    """Joint posterior amplitude moments for one time-frequency cell.

    Builds the speech ring at the origin and the noise ring at z from the
    two marginal priors, forms the pairwise product mixture, and
    accumulates the mixture mean and covariance of (|S|, |S−z|).  Returns
    plain ``(mu (2,), Sigma (2,2))`` arrays; ``info`` (if given) receives
    the two component counts.
    """
    speech = build_ring(mu_speech, var_speech, center=0j, cap=cap,
                        counters=counters)
    noise = build_ring(mu_noise, var_noise, center=complex(z), cap=cap,
                       counters=counters)
    if info is not None:
        info["G_speech"] = speech.G
        info["G_noise"] = noise.G
    w, means, dprod = _product_arrays(speech, noise)

    keep = w > _WEIGHT_PRUNE * w.max()
    if not np.all(keep):
        if counters is not None:
            dropped = int(np.count_nonzero(~keep))
            counters["components_pruned"] = counters.get("components_pruned", 0) + dropped
        w, means = w[keep], means[keep]
        w = w / w.sum()

    # squared-amplitude moments for every retained component at once
    shifted = means - z
    a2 = np.abs(means) ** 2
    b2 = np.abs(shifted) ** 2
    Om1 = dprod + a2
    Om2 = dprod + b2
    s11 = dprod * dprod + 2.0 * dprod * a2
    s22 = dprod * dprod + 2.0 * dprod * b2
    s12 = dprod * dprod + 2.0 * dprod * np.real(means * np.conj(shifted))

    m1 = Om1 ** 2 / s11
    m2 = Om2 ** 2 / s22
    ratios = gamma_half_ratio(np.concatenate([m1, m2]))
    g = m1.shape[0]
    mu1 = ratios[:g] * np.sqrt(Om1 / m1)
    mu2 = ratios[g:] * np.sqrt(Om2 / m2)
    v1 = Om1 - mu1 ** 2
    v2 = Om2 - mu2 ** 2
    rho = s12 / np.sqrt(s11 * s22)
    cov = rho * np.sqrt(v1 * v2)

    mean_c = np.empty((g, 2))
    mean_c[:, 0] = mu1
    mean_c[:, 1] = mu2
    mu = w @ mean_c
    sig_c = np.empty((g, 2, 2))
    sig_c[:, 0, 0] = v1
    sig_c[:, 1, 1] = v2
    sig_c[:, 0, 1] = sig_c[:, 1, 0] = cov
    scatter = sig_c + mean_c[:, :, None] * mean_c[:, None, :]
    Sigma = np.einsum("g,gij->ij", w, scatter) - np.outer(mu, mu)
    # mixture covariances are PSD up to rounding; only project when rounding
    # actually pushed an eigenvalue negative
    if (
        Sigma[0, 0] < 0.0
        or Sigma[1, 1] < 0.0
        or Sigma[0, 0] * Sigma[1, 1] < Sigma[0, 1] * Sigma[1, 0]
    ):
        Sigma = psd_project(Sigma)
    return mu, Sigma


def mdkr_posterior(
    prior: MomentPair,
    noise_prior: MomentPair,
    z: complex,
    max_components: int = DEFAULT_RING_CAP,
    counters: dict | None = None,
) -> MomentPair:
    """:func:`mdkr_cell` on a pair of single-amplitude moment containers."""
    mu, Sigma = mdkr_cell(
        float(prior.mu[..., 0]), float(prior.sigma[..., 0, 0]),
        float(noise_prior.mu[..., 0]), float(noise_prior.sigma[..., 0, 0]),
        complex(z), cap=max_components, counters=counters,
    )
    return MomentPair(mu, Sigma)
