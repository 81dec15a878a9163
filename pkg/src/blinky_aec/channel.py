"""LED-to-camera optical link: distortion, camera resampling, clipping.

Two implementations share one noise source so they agree sample for sample:
the numpy path used to record received signals, and a torch path that sits
inside a training graph for the end-to-end baseline.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
import torch

SCENARIOS = ("none", "resample", "full")

# Incremented by every public channel entry point; lets callers prove a code path
# never touched the channel.
call_counts: Counter = Counter()


def reset_call_counts() -> None:
    call_counts.clear()


@dataclass(frozen=True)
class ChannelParams:
    a: float = 1.0
    b: float = 0.1
    sigma: float = 0.05

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class CameraConfig:
    frame_rate: float = 30.0
    n_led: int = 4
    window: float = 5.0

    def __post_init__(self):
        if self.frame_rate <= 0 or self.n_led < 1 or self.window <= 0:
            raise ValueError(f"invalid camera config {self}")

    @property
    def n_frames(self) -> int:
        return int(math.floor(self.frame_rate * self.window + 1e-9))


@dataclass
class LedFrameGrid:
    values: np.ndarray  # (n_led, n_frames)
    clipped: bool = True

    @property
    def shape(self):
        return self.values.shape


def latent_capacity(cam: CameraConfig) -> int:
    """Symbols per window at the per-LED Nyquist rate (half the frame rate)."""
    return int(math.floor(cam.frame_rate / 2 * cam.n_led * cam.window + 1e-9))


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, (tuple, list)):
        return np.random.SeedSequence([int(s) for s in seed])
    return np.random.SeedSequence(int(seed))


def channel_noise(shape, sigma: float, seed) -> np.ndarray:
    """Gaussian channel noise, deterministic in *seed* (int, tuple of ints or SeedSequence)."""
    if sigma == 0:
        return np.zeros(shape)
    return np.random.default_rng(_seed_sequence(seed)).normal(0.0, sigma, size=shape)


def distort(z, p: ChannelParams, seed=0) -> np.ndarray:
    call_counts["distort"] += 1
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("distort input must be finite")
    return p.a * z + p.b + channel_noise(z.shape, p.sigma, seed)


def is_high_rate(length: int, cam: CameraConfig) -> bool:
    """True when one LED's share of the latent exceeds the number of camera frames."""
    return math.ceil(length / cam.n_led) > cam.n_frames


def _zoh_index(n_symbols: int, cam: CameraConfig) -> np.ndarray:
    # frame j samples the symbol active at time j / frame_rate
    j = np.arange(cam.n_frames)
    return np.floor(j * n_symbols / (cam.frame_rate * cam.window) + 1e-9).astype(np.int64)


def _grid_index(length: int, cam: CameraConfig) -> np.ndarray:
    """Flat latent index feeding each (led, frame) cell; contiguous block per LED."""
    per_led = math.ceil(length / cam.n_led)
    sym = _zoh_index(per_led, cam)
    return np.arange(cam.n_led)[:, None] * per_led + sym[None, :]


def _frame_segments(length: int, cam: CameraConfig) -> np.ndarray:
    """Segment id of every high-rate sample: which camera exposure integrates it."""
    edges = (np.arange(cam.n_frames + 1) * length) // cam.n_frames
    return np.repeat(np.arange(cam.n_frames), np.diff(edges))


def resample_to_camera(z, cam: CameraConfig, clip: bool = True) -> LedFrameGrid:
    """Map a latent (or a high-rate envelope) to the n_led x n_frames camera grid.

    Latents are zero-padded to a multiple of n_led, split into contiguous
    per-LED blocks and held for a symbol period each (zero-order hold).
    A signal too long for that (e.g. a 16 kHz envelope) is averaged over each
    frame interval and the result is driven on every LED.
    """
    call_counts["resample"] += 1
    z = np.asarray(z, dtype=np.float64).ravel()
    if z.size == 0:
        raise ValueError("cannot resample an empty latent")
    if is_high_rate(z.size, cam):
        seg = _frame_segments(z.size, cam)
        sums = np.bincount(seg, weights=z, minlength=cam.n_frames)
        env = sums / np.bincount(seg, minlength=cam.n_frames)
        values = np.repeat(env[None, :], cam.n_led, axis=0)
    else:
        per_led = math.ceil(z.size / cam.n_led)
        zp = np.zeros(per_led * cam.n_led)
        zp[: z.size] = z
        values = zp[_grid_index(z.size, cam)]
    if clip:
        values = np.clip(values, 0.0, 1.0)
    return LedFrameGrid(values, clipped=clip)


def transmit(z, scenario: str, p: ChannelParams, cam: CameraConfig, seed=0):
    """Transmit = identity, Resample, or Resample after Distort."""
    if scenario == "none":
        return np.array(z, dtype=np.float64, copy=True)
    if scenario == "resample":
        return resample_to_camera(z, cam)
    if scenario == "full":
        return resample_to_camera(distort(z, p, seed), cam)
    raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")


def received_shape(length: int, scenario: str, cam: CameraConfig) -> tuple[int, ...]:
    if scenario == "none":
        return (length,)
    return (cam.n_led, cam.n_frames)


# ---------------------------------------------------------------- torch path


def resample_to_camera_torch(z: torch.Tensor, cam: CameraConfig, clip: bool = True) -> torch.Tensor:
    """Differentiable twin of :func:`resample_to_camera` for a (batch, L) tensor.

    The hard clip passes gradient 1 inside [0, 1] and 0 outside.
    """
    batch, length = z.shape
    if is_high_rate(length, cam):
        seg = torch.as_tensor(_frame_segments(length, cam), device=z.device)
        counts = torch.bincount(seg, minlength=cam.n_frames).to(z.dtype)
        sums = z.new_zeros(batch, cam.n_frames).index_add(1, seg, z)
        out = (sums / counts).unsqueeze(1).expand(batch, cam.n_led, cam.n_frames)
    else:
        per_led = math.ceil(length / cam.n_led)
        zp = torch.nn.functional.pad(z, (0, per_led * cam.n_led - length))
        idx = torch.as_tensor(_grid_index(length, cam).ravel(), device=z.device)
        out = zp[:, idx].reshape(batch, cam.n_led, cam.n_frames)
    return out.clamp(0.0, 1.0) if clip else out


def transmit_torch(z: torch.Tensor, scenario: str, p: ChannelParams, cam: CameraConfig,
                   seeds=None) -> torch.Tensor:
    """Batched differentiable channel; row ``i`` draws its noise from ``seeds[i]``."""
    call_counts["transmit_torch"] += 1
    if scenario == "none":
        return z
    if scenario == "resample":
        return resample_to_camera_torch(z, cam)
    if scenario != "full":
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    if p.sigma > 0:
        if seeds is None or len(seeds) != z.shape[0]:
            raise ValueError("full scenario with sigma > 0 needs one seed per batch row")
        noise = np.stack([channel_noise(z.shape[1:], p.sigma, s) for s in seeds])
        distorted = p.a * z + p.b + torch.as_tensor(noise, dtype=z.dtype, device=z.device)
    else:
        distorted = p.a * z + p.b
    return resample_to_camera_torch(distorted, cam)
