"""Shoebox room simulation with the image-source method."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .dataset import Waveform

SPEED_OF_SOUND = 343.0
PLACEMENT_MARGIN = 0.3
MIN_DISTANCE = 0.05
FRAC_DELAY_TAPS = 81


@dataclass(frozen=True)
class RoomScene:
    dimensions: tuple[float, float, float] = (8.0, 6.0, 4.0)
    absorption: float = 0.4
    max_image_order: int = 10
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        if len(self.dimensions) != 3 or any(d <= 0 for d in self.dimensions):
            raise ValueError(f"room dimensions must be three positive lengths, got {self.dimensions}")
        if not 0 < self.absorption <= 1:
            raise ValueError(f"absorption must lie in (0, 1], got {self.absorption}")
        if self.max_image_order < 0:
            raise ValueError("max_image_order must be >= 0")
        object.__setattr__(self, "dimensions", tuple(float(d) for d in self.dimensions))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:12]


@dataclass(frozen=True)
class Placement:
    blinky_positions: np.ndarray  # (n_blinkies, 3)
    source_positions: np.ndarray  # (n_classes, 3), row k is the source of class k
    seed: int


@dataclass(frozen=True)
class RIRSet:
    responses: np.ndarray  # (n_classes, n_blinkies, common_length)
    onsets: np.ndarray  # direct-path sample index per (class, blinky)
    sample_rate: int

    @property
    def common_length(self) -> int:
        return self.responses.shape[-1]

    def save(self, path: str | Path) -> None:
        np.savez(path, responses=self.responses, onsets=self.onsets,
                 sample_rate=np.array(self.sample_rate))

    @classmethod
    def load(cls, path: str | Path) -> "RIRSet":
        with np.load(path) as f:
            return cls(f["responses"], f["onsets"], int(f["sample_rate"]))


def generate_placement(scene: RoomScene, n_blinkies: int = 5, n_classes: int = 50,
                       seed: int = 0, margin: float = PLACEMENT_MARGIN) -> Placement:
    dims = np.asarray(scene.dimensions)
    if np.any(dims <= 2 * margin):
        raise ValueError(f"margin {margin} m leaves no interior in a {tuple(dims)} room")
    rng = np.random.default_rng(seed)
    blinkies = rng.uniform(margin, dims - margin, size=(n_blinkies, 3))
    sources = rng.uniform(margin, dims - margin, size=(n_classes, 3))
    return Placement(blinkies, sources, seed)


def _image_grid(max_order: int) -> np.ndarray:
    r = np.arange(-max_order, max_order + 1)
    grid = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    return grid[np.abs(grid).sum(axis=1) <= max_order]


def image_sources(scene: RoomScene, source: np.ndarray):
    """Image positions and reflection gains for every image up to the scene's order."""
    grid = _image_grid(scene.max_image_order)
    dims = np.asarray(scene.dimensions)
    pos = np.where(grid % 2 == 1, dims * (grid + 1) - source, dims * grid + source)
    beta = np.sqrt(1.0 - scene.absorption)
    n_reflections = np.abs(grid).sum(axis=1)
    # 0**0 == 1 keeps the direct path when beta == 0
    gain = np.power(beta, n_reflections)
    return pos, gain


def _frac_delay_kernels(frac: np.ndarray, taps: int = FRAC_DELAY_TAPS) -> np.ndarray:
    half = taps // 2
    n = np.arange(-half, half + 1)
    t = n[None, :] - frac[:, None]
    window = np.where(np.abs(t) <= half, 0.5 * (1 + np.cos(np.pi * t / half)), 0.0)
    return np.sinc(t) * window


def single_rir(scene: RoomScene, source, receiver, sample_rate: int):
    """Impulse response between two points; returns (response, direct-path index)."""
    source = np.asarray(source, dtype=np.float64)
    receiver = np.asarray(receiver, dtype=np.float64)
    direct = np.linalg.norm(source - receiver)
    if direct < MIN_DISTANCE:
        raise ValueError(f"source and receiver are {direct:.3f} m apart (< {MIN_DISTANCE} m)")
    pos, gain = image_sources(scene, source)
    dist = np.linalg.norm(pos - receiver, axis=1)
    keep = gain > 0
    dist, gain = dist[keep], gain[keep]

    delay = dist / scene.speed_of_sound * sample_rate
    delay_i = np.round(delay).astype(np.int64)
    kernels = _frac_delay_kernels(delay - delay_i) * (gain / (4 * np.pi * dist))[:, None]

    half = FRAC_DELAY_TAPS // 2
    idx = delay_i[:, None] + np.arange(-half, half + 1)[None, :]
    length = int(idx.max()) + 1
    rir = np.zeros(length)
    valid = idx >= 0  # taps before t=0 are dropped so the direct path keeps its geometric index
    np.add.at(rir, idx[valid], kernels[valid])
    onset = int(round(direct / scene.speed_of_sound * sample_rate))
    return rir, onset


def compute_rirs(scene: RoomScene, placement: Placement, sample_rate: int = 16000) -> RIRSet:
    n_cls = len(placement.source_positions)
    n_bl = len(placement.blinky_positions)
    rirs, onsets = [], np.zeros((n_cls, n_bl), dtype=np.int64)
    for k, src in enumerate(placement.source_positions):
        row = []
        for i, mic in enumerate(placement.blinky_positions):
            h, onsets[k, i] = single_rir(scene, src, mic, sample_rate)
            row.append(h)
        rirs.append(row)
    common = max(len(h) for row in rirs for h in row)
    out = np.zeros((n_cls, n_bl, common))
    for k, row in enumerate(rirs):
        for i, h in enumerate(row):
            out[k, i, : len(h)] = h
    return RIRSet(out, onsets, sample_rate)


def cached_rirs(scene: RoomScene, placement: Placement, sample_rate: int,
                cache_dir: str | Path | None) -> RIRSet:
    """compute_rirs backed by an on-disk archive keyed by scene digest and placement seed."""
    if cache_dir is None:
        return compute_rirs(scene, placement, sample_rate)
    n_cls, n_bl = len(placement.source_positions), len(placement.blinky_positions)
    path = Path(cache_dir) / (f"rirs_{scene.digest()}_seed{placement.seed}"
                              f"_{n_cls}x{n_bl}_{sample_rate}.npz")
    if path.is_file():
        return RIRSet.load(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rirs = compute_rirs(scene, placement, sample_rate)
    rirs.save(path)
    return rirs


def propagate(source: Waveform, rir: np.ndarray, offset: int = 0,
              length: int | None = None) -> Waveform:
    """Convolve *source* with *rir*; keep ``length`` samples starting at ``offset``.

    ``length`` defaults to the source length. Missing tail samples are zero.
    """
    rir = np.asarray(rir, dtype=np.float64)
    if rir.size == 0:
        raise ValueError("empty impulse response")
    length = len(source.samples) if length is None else length
    y = fftconvolve(source.samples, rir)
    out = np.zeros(length)
    seg = y[offset:offset + length]
    out[: len(seg)] = seg
    return Waveform(out, source.sample_rate)
