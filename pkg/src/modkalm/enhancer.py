"""End-to-end pipeline: track noise, pre-clean, fit modulation models per
bin, run the per-bin amplitude Kalman filter, resynthesize with the noisy
phase.

Two update flavours share the machinery: the stationary-noise scalar update
(gamma-shaped amplitude prior against the tracked noise floor) and the joint
speech/noise update built on ring mixtures.  The plain log-spectral baseline
is the degenerate mode that skips the Kalman stage entirely.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .gamma_update import fit_gamma_prior, mdkm_posterior
from .gaussring import DEFAULT_RING_CAP, mdkr_cell
from .kalman import KalmanState, MomentPair, predict, update
from .logmmse import NoiseTrack, logmmse_enhance, track_noise
from .lpc import (
    ModFrameConfig,
    frame_model_index,
    noise_lpc_grid,
    prediction_gain,
    speech_lpc_grid,
)
from .stft import FrameConfig, analyze, synthesize

# Relative floors keeping degenerate cells solvable.  The speech floor is
# deliberately larger than the noise floor: when both priors have collapsed
# (no evidence either way, e.g. right after silence) the observation is
# attributed to speech rather than split, which keeps attacks intact.
_SPEECH_FLOOR_REL = 1e-10
_NOISE_FLOOR_REL = 1e-12
_ABS_FLOOR = 1e-300
# The noise branch models the tracked noise process; cap its amplitude
# prediction at this multiple of the tracker's Rayleigh mean (a true
# Rayleigh amplitude exceeds 4x its mean with probability ~3e-6) so that
# speech estimation residuals cannot masquerade as sudden noise bursts.
_NOISE_MEAN_CAP = 4.0


class Mode(enum.Enum):
    LOGMMSE = "logmmse"
    MDKM = "mdkm"
    MDKR = "mdkr"

    @classmethod
    def parse(cls, text: str) -> "Mode":
        try:
            return cls(text.lower())
        except ValueError:
            allowed = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown mode {text!r}; expected one of {allowed}")


@dataclass(frozen=True)
class EnhancerConfig:
    """Pipeline settings; the defaults match the standard operating point
    (16 kHz, 32 ms/8 ms acoustic frames, 64 ms modulation windows, speech
    order 3, noise order 4 for joint tracking)."""

    mode: Mode = Mode.MDKR
    sample_rate: int = 16000
    frame_ms: float = 32.0
    inc_ms: float = 8.0
    mod_frames: int = 8           # modulation window length, in acoustic frames
    speech_order: int = 3
    noise_order: int | None = None  # None -> mode default (0 scalar, 4 joint)
    ring_cap: int = DEFAULT_RING_CAP

    def __post_init__(self):
        if self.speech_order < 1:
            raise ValueError("speech_order must be >= 1")
        if self.ring_cap < 1:
            raise ValueError("ring_cap must be >= 1")
        if self.mod_frames <= self.speech_order:
            raise ValueError("modulation window must exceed the speech order")
        if self.mode is Mode.MDKM and self.noise_order not in (None, 0):
            raise ValueError(
                "scalar mode treats the noise as stationary: noise_order must "
                "be 0 (or left unset)"
            )
        if self.mode is Mode.MDKR and self.noise_order == 0:
            raise ValueError("joint mode needs a noise model order >= 1")

    def resolved_noise_order(self) -> int:
        if self.mode is Mode.MDKR:
            return 4 if self.noise_order is None else self.noise_order
        return 0

    def frame_config(self) -> FrameConfig:
        return FrameConfig.from_ms(self.sample_rate, self.frame_ms, self.inc_ms)

    def mod_config(self) -> ModFrameConfig:
        return ModFrameConfig(mod_frame_len=self.mod_frames, mod_frame_inc=1)


@dataclass
class Diagnostics:
    """Everything the pipeline can report about one run."""

    enhanced: np.ndarray
    mode: Mode
    counters: dict
    g_speech: np.ndarray | None      # per-cell speech component counts
    g_noise: np.ndarray | None       # per-cell noise component counts
    prediction_gain_db: np.ndarray | None  # per-bin one-step model gain


def enhance(samples, rate: int, cfg: EnhancerConfig = EnhancerConfig()) -> np.ndarray:
    """Enhanced time-domain signal, same length as the input."""
    return _run(samples, rate, cfg, capture=False).enhanced


def diagnose(samples, rate: int, cfg: EnhancerConfig = EnhancerConfig()) -> Diagnostics:
    """Run the pipeline while recording component counts, model gains and
    all clamp/fault counters."""
    return _run(samples, rate, cfg, capture=True)


def _run(samples, rate: int, cfg: EnhancerConfig, capture: bool) -> Diagnostics:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("signal is empty")
    if rate != cfg.sample_rate:
        raise ValueError(f"sample rate {rate} != configured {cfg.sample_rate}")
    counters: dict = {"cell_faults": 0}
    if not np.any(x):
        return Diagnostics(np.zeros_like(x), cfg.mode, counters, None, None, None)

    fcfg = cfg.frame_config()
    spec = analyze(x, fcfg)
    noise = track_noise(spec)
    pre = logmmse_enhance(spec, noise)

    if cfg.mode is Mode.LOGMMSE:
        amps_hat = pre
        g_s = g_n = gains = None
    else:
        amps_hat, g_s, g_n, gains = _kalman_amplitudes(
            spec, noise, pre, cfg, counters, capture
        )
    out = synthesize(amps_hat, spec.phase, fcfg, n_samples=x.size)
    return Diagnostics(out, cfg.mode, counters, g_s, g_n, gains)


def _init_rows(amp0, psd0, p: int, q: int, diffuse: float):
    """Fresh state rows seeded from an observed amplitude and noise power.

    Speech rows start diffuse (variance at overall signal-power scale) so the
    first observations dominate; noise rows carry the Rayleigh moments the
    stationary tracker implies.
    """
    k = amp0.shape[0] if amp0.ndim else 1
    dim = p + q
    a = np.zeros((k, dim))
    P = np.zeros((k, dim, dim))
    a[:, :p] = np.asarray(amp0).reshape(-1, 1)
    ii = np.arange(p)
    P[:, ii, ii] = np.asarray(amp0).reshape(-1, 1) ** 2 + diffuse
    if q:
        a[:, p:] = np.sqrt(np.pi * np.asarray(psd0).reshape(-1, 1) / 4.0)
        jj = np.arange(p, dim)
        P[:, jj, jj] = (1.0 - np.pi / 4.0) * np.asarray(psd0).reshape(-1, 1) + _ABS_FLOOR
    return a, P


def _kalman_amplitudes(spec, noise: NoiseTrack, pre, cfg: EnhancerConfig,
                       counters: dict, capture: bool):
    amps = spec.amplitude
    zvals = spec.values
    n_frames, n_bins = amps.shape
    p = cfg.speech_order
    q = cfg.resolved_noise_order()
    dim = p + q
    mcfg = cfg.mod_config()

    sp_c, sp_v = speech_lpc_grid(pre, mcfg, p)
    jmap = frame_model_index(n_frames, mcfg, sp_c.shape[0])
    if q:
        nz_c, nz_v = noise_lpc_grid(amps, noise.vad, mcfg, q)

    mean_power = float(np.mean(amps ** 2))
    sfloor = _SPEECH_FLOOR_REL * mean_power + _ABS_FLOOR
    nfloor = _NOISE_FLOOR_REL * mean_power + _ABS_FLOOR

    a0, P0 = _init_rows(amps[0], noise.psd[0], p, q, mean_power)
    state = KalmanState(a0, P0, p, q)

    F = np.zeros((n_bins, dim, dim))
    if p > 1:
        F[:, 1:p, : p - 1] = np.eye(p - 1)
    if q > 1:
        F[:, p + 1:, p: dim - 1] = np.eye(q - 1)
    d_exc = 2 if q else 1
    D = np.zeros((dim, d_exc))
    D[0, 0] = 1.0
    if q:
        D[p, 1] = 1.0
    Q = np.zeros((n_bins, d_exc, d_exc))

    amps_hat = np.empty_like(amps)
    g_speech = np.zeros((n_frames, n_bins), dtype=np.int16) if capture and q else None
    g_noise = np.zeros((n_frames, n_bins), dtype=np.int16) if capture and q else None

    sel = state.picked()
    info: dict | None = {} if capture else None

    for n in range(n_frames):
        j = jmap[n]
        F[:, 0, :p] = -sp_c[j]
        Q[:, 0, 0] = sp_v[j]
        if q:
            F[:, p, p:] = -nz_c[j]
            Q[:, 1, 1] = nz_v[j]

        state, prior = predict(state, F, Q, D, counters)

        # keep the prior marginals strictly positive and finite
        mu = prior.mu
        Sigma = prior.sigma
        bad = ~(np.isfinite(mu).all(axis=1) & np.isfinite(Sigma).all(axis=(1, 2)))
        if bad.any():
            mu[bad] = 0.0
            Sigma[bad] = np.eye(d_exc) * mean_power
        diag = np.einsum("kii->ki", Sigma)
        np.maximum(diag[:, 0], sfloor, out=diag[:, 0])
        if q:
            np.maximum(diag[:, 1], nfloor, out=diag[:, 1])
            mcap = _NOISE_MEAN_CAP * np.sqrt(np.pi * noise.psd[n] / 4.0)
            over = mu[:, 1] > mcap
            if over.any():
                mu[over, 1] = mcap[over]
                counters["noise_mean_clamped"] = (
                    counters.get("noise_mean_clamped", 0) + int(over.sum())
                )
        prior = MomentPair(mu, Sigma)

        if q == 0:
            gprior = fit_gamma_prior(mu[:, 0], Sigma[:, 0, 0], counters)
            mean, var = mdkm_posterior(gprior, noise.psd[n], amps[n], counters)
            good = np.isfinite(mean) & np.isfinite(var) & (var > 0)
            bad |= ~good
            post_mu = np.where(good, mean, mu[:, 0])[:, None]
            post_sig = np.where(good, var, Sigma[:, 0, 0])[:, None, None]
        else:
            post_mu = mu.copy()
            post_sig = Sigma.copy()
            for k in range(n_bins):
                if bad[k]:
                    continue
                try:
                    cmu, csig = mdkr_cell(
                        mu[k, 0], Sigma[k, 0, 0], mu[k, 1], Sigma[k, 1, 1],
                        complex(zvals[n, k]), cap=cfg.ring_cap,
                        counters=counters, info=info,
                    )
                except (ValueError, FloatingPointError, ZeroDivisionError):
                    bad[k] = True
                    continue
                if not (np.isfinite(cmu).all() and np.isfinite(csig).all()):
                    bad[k] = True
                    continue
                post_mu[k] = cmu
                post_sig[k] = csig
                if capture:
                    g_speech[n, k] = info["G_speech"]
                    g_noise[n, k] = info["G_noise"]
        posterior = MomentPair(post_mu, post_sig)

        try:
            state = update(state, prior, posterior, counters)
        except np.linalg.LinAlgError:
            state = _update_isolating(state, prior, posterior, bad, counters)

        row_bad = bad | ~(
            np.isfinite(state.a).all(axis=1)
            & np.isfinite(state.P).all(axis=(1, 2))
        )
        est = np.maximum(posterior.mu[:, 0], 0.0)
        if row_bad.any():
            est = est.copy()
            est[row_bad] = pre[n, row_bad]
            ra, rp = _init_rows(amps[n, row_bad], noise.psd[n, row_bad], p, q, mean_power)
            state.a[row_bad] = ra
            state.P[row_bad] = rp
            counters["cell_faults"] = counters.get("cell_faults", 0) + int(row_bad.sum())
        amps_hat[n] = est

    gains = None
    if capture:
        preds = np.zeros_like(pre)
        for n in range(p, n_frames):
            hist = pre[n - p:n][::-1]           # newest history first
            preds[n] = -np.einsum("ki,ik->k", sp_c[jmap[n]], hist)
        gains = prediction_gain(pre[p:], preds[p:])
    return amps_hat, g_speech, g_noise, gains


def _update_isolating(state: KalmanState, prior: MomentPair,
                      posterior: MomentPair, bad: np.ndarray,
                      counters: dict) -> KalmanState:
    """Per-bin fallback when the batched update hits a singular system."""
    a = state.a.copy()
    P = state.P.copy()
    for k in range(a.shape[0]):
        row = KalmanState(state.a[k], state.P[k], state.p, state.q)
        try:
            upd = update(
                row,
                MomentPair(prior.mu[k], prior.sigma[k]),
                MomentPair(posterior.mu[k], posterior.sigma[k]),
                counters,
            )
            a[k], P[k] = upd.a, upd.P
        except np.linalg.LinAlgError:
            bad[k] = True
    return KalmanState(a, P, state.p, state.q)
