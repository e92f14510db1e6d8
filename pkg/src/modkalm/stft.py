"""Framing, windowing, forward STFT and weighted overlap-add inverse.

The analysis applies a periodic tapered window and keeps the one-sided
spectrum; the synthesis applies the window a second time and divides by the
numerically accumulated squared-window overlap, which makes the round trip
exact (to rounding) wherever the overlap is complete.  Signals are padded by
one frame length at each end so the whole original extent has full overlap.
"""
from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

__all__ = [
    "FrameConfig",
    "ComplexSpectrogram",
    "analyze",
    "synthesize",
    "read_wav",
    "write_wav",
]


@dataclass(frozen=True)
class FrameConfig:
    """Acoustic framing parameters; defaults are 16 kHz, 32 ms / 8 ms, Hamming."""

    sample_rate: int = 16000
    frame_len: int = 512
    frame_inc: int = 128
    window: str = "hamming"

    def __post_init__(self):
        if self.frame_len <= 0:
            raise ValueError("frame_len must be positive")
        if not 0 < self.frame_inc <= self.frame_len:
            raise ValueError("frame_inc must be in (0, frame_len]")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @classmethod
    def from_ms(cls, sample_rate: int, frame_ms: float = 32.0,
                inc_ms: float = 8.0, window: str = "hamming") -> "FrameConfig":
        return cls(
            sample_rate=sample_rate,
            frame_len=int(round(sample_rate * frame_ms / 1000.0)),
            frame_inc=int(round(sample_rate * inc_ms / 1000.0)),
            window=window,
        )

    @property
    def n_bins(self) -> int:
        return self.frame_len // 2 + 1

    def window_samples(self) -> np.ndarray:
        # periodic form: required for constant squared-window overlap at
        # len/inc = 4
        return get_window(self.window, self.frame_len, fftbins=True)


@dataclass
class ComplexSpectrogram:
    """One-sided STFT grid: frame index along axis 0, bin index along axis 1."""

    values: np.ndarray
    config: FrameConfig
    n_samples: int = field(default=0)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]

    @property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.values)


def analyze(signal, config: FrameConfig = FrameConfig()) -> ComplexSpectrogram:
    """Windowed one-sided DFT of every frame of ``signal``.

    The signal is zero-padded by frame_len at the front and by at least
    frame_len at the back (rounded up so the hop divides the padded length),
    so every original sample is covered by a full set of overlapping frames.
    """
    x = np.asarray(signal, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("signal is empty")
    if x.size < config.frame_len:
        raise ValueError(
            f"signal shorter than one frame ({x.size} < {config.frame_len})"
        )
    flen, inc = config.frame_len, config.frame_inc
    pad_back = flen + (-(x.size + flen)) % inc
    xp = np.concatenate([np.zeros(flen), x, np.zeros(pad_back)])
    frames = sliding_window_view(xp, flen)[::inc]
    win = config.window_samples()
    values = np.fft.rfft(frames * win, axis=1)
    return ComplexSpectrogram(values=values, config=config, n_samples=x.size)


def synthesize(amplitudes, phases, config: FrameConfig = FrameConfig(),
               n_samples: int | None = None) -> np.ndarray:
    """Weighted overlap-add reconstruction from amplitude and phase grids.

    Inverts :func:`analyze`: the synthesis window is applied again and the
    accumulation divided by the summed squared window.  ``n_samples`` trims
    the result to the original signal length; without it the trailing
    round-up padding (less than one hop) is retained as near-zero samples.
    """
    amp = np.asarray(amplitudes, dtype=float)
    ph = np.asarray(phases, dtype=float)
    if amp.shape != ph.shape or amp.ndim != 2:
        raise ValueError("amplitude/phase grids must be equal-shaped 2-D arrays")
    if amp.shape[1] != config.n_bins:
        raise ValueError(
            f"grid has {amp.shape[1]} bins, config implies {config.n_bins}"
        )
    if np.any(amp < 0):
        raise ValueError("amplitudes must be nonnegative")
    flen, inc = config.frame_len, config.frame_inc
    n_frames = amp.shape[0]
    win = config.window_samples()
    frames = np.fft.irfft(amp * np.exp(1j * ph), n=flen, axis=1) * win
    total = (n_frames - 1) * inc + flen
    y = np.zeros(total)
    norm = np.zeros(total)
    w2 = win * win
    for i in range(n_frames):
        s = i * inc
        y[s:s + flen] += frames[i]
        norm[s:s + flen] += w2
    good = norm > 1e-10 * norm.max()
    y[good] /= norm[good]
    y[~good] = 0.0
    if n_samples is None:
        end = total - flen
    else:
        end = flen + int(n_samples)
        if end > total:
            raise ValueError("n_samples exceeds the synthesized extent")
    return y[flen:end]


def read_wav(path, expect_rate: int | None = None) -> tuple[np.ndarray, int]:
    """Read a 16-bit PCM mono WAV file, normalized to [-1, 1)."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise ValueError(f"{path}: mono required")
        if w.getsampwidth() != 2:
            raise ValueError(f"{path}: 16-bit PCM required")
        if w.getcomptype() != "NONE":
            raise ValueError(f"{path}: unsupported encoding {w.getcomptype()}")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    if expect_rate is not None and rate != expect_rate:
        raise ValueError(f"{path}: sample rate {rate} != expected {expect_rate}")
    samples = np.frombuffer(raw, dtype="<i2").astype(float) / 32768.0
    return samples, rate


def write_wav(path, samples, rate: int) -> int:
    """Write 16-bit PCM mono WAV; returns the number of saturated samples."""
    x = np.asarray(samples, dtype=float).ravel()
    q = np.round(x * 32768.0)
    clipped = int(np.count_nonzero((q < -32768) | (q > 32767)))
    q = np.clip(q, -32768, 32767).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(rate))
        w.writeframes(q.tobytes())
    return clipped
