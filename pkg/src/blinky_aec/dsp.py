"""Log-Mel front-end and the non-learned embeddings."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import get_window

from .dataset import Waveform

SAMPLE_RATE = 16000
N_FFT = 512
WIN_LENGTH = 400
HOP_LENGTH = 160
N_MELS = 80
LOG_FLOOR = 1e-6


@dataclass
class LogMelSpectrogram:
    values: np.ndarray  # (n_mels, n_frames)
    frame_rate: float = SAMPLE_RATE / HOP_LENGTH

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class AffineStats:
    """``(x - offset) / scale``; used for latent range mapping and spectrogram standardization."""

    offset: float
    scale: float

    def __post_init__(self):
        if not np.isfinite(self.offset) or not np.isfinite(self.scale):
            raise ValueError("affine stats must be finite")
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    def apply(self, x):
        return (x - self.offset) / self.scale

    def to_dict(self) -> dict:
        return {"offset": float(self.offset), "scale": float(self.scale)}


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE,
                   f_min: float = 0.0, f_max: float | None = None) -> np.ndarray:
    """Triangular HTK-scale filters, shape (n_mels, n_fft // 2 + 1), unnormalized."""
    f_max = sample_rate / 2 if f_max is None else f_max
    freqs = np.linspace(0, sample_rate / 2, n_fft // 2 + 1)
    f_pts = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    f_diff = np.diff(f_pts)
    slopes = f_pts[None, :] - freqs[:, None]
    down = -slopes[:, :-2] / f_diff[:-1]
    up = slopes[:, 2:] / f_diff[1:]
    fb = np.maximum(0.0, np.minimum(down, up))
    fb.setflags(write=False)
    return fb.T


@lru_cache(maxsize=4)
def _padded_window(win_length: int = WIN_LENGTH, n_fft: int = N_FFT) -> np.ndarray:
    w = np.zeros(n_fft)
    left = (n_fft - win_length) // 2
    w[left:left + win_length] = get_window("hann", win_length, fftbins=True)
    w.setflags(write=False)
    return w


def power_spectrogram(x: np.ndarray) -> np.ndarray:
    """Centered, reflect-padded STFT power, shape (n_fft//2+1, len(x)//hop + 1)."""
    pad = N_FFT // 2
    xp = np.pad(x, pad, mode="reflect")
    n_frames = 1 + len(x) // HOP_LENGTH
    frames = np.lib.stride_tricks.sliding_window_view(xp, N_FFT)[::HOP_LENGTH][:n_frames]
    spec = np.fft.rfft(frames * _padded_window(), axis=-1)
    return (spec.real ** 2 + spec.imag ** 2).T


def logmel(w: Waveform) -> LogMelSpectrogram:
    if w.sample_rate != SAMPLE_RATE:
        raise ValueError(f"logmel expects {SAMPLE_RATE} Hz input, got {w.sample_rate}")
    if len(w.samples) < WIN_LENGTH:
        raise ValueError(f"input of {len(w.samples)} samples is shorter than one window")
    mel = mel_filterbank() @ power_spectrogram(w.samples)
    return LogMelSpectrogram(np.log(mel + LOG_FLOOR))


def sound_power_embedding(w: Waveform) -> np.ndarray:
    return np.square(w.samples)


def latent_normalize(z, stats: AffineStats) -> np.ndarray:
    return np.clip(stats.apply(np.asarray(z, dtype=np.float64)), 0.0, 1.0)


def fit_spectrogram_stats(spectrograms) -> AffineStats:
    """Global mean/std over an iterable of log-Mel matrices."""
    total = 0.0
    total_sq = 0.0
    count = 0
    for X in spectrograms:
        X = np.asarray(X, dtype=np.float64)
        total += X.sum()
        total_sq += np.square(X).sum()
        count += X.size
    if count == 0:
        raise ValueError("no spectrograms to fit statistics on")
    mean = total / count
    std = np.sqrt(max(total_sq / count - mean ** 2, 0.0))
    return AffineStats(float(mean), float(max(std, 1e-8)))
