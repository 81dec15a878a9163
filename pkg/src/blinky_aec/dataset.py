"""ESC-50 ingestion, per-class splits and waveform conditioning."""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.io import wavfile

from .errors import ConfigError, DataError

SPLITS = ("train", "validation", "test")
METADATA_RELPATH = Path("meta") / "esc50.csv"
AUDIO_DIRNAME = "audio"


@dataclass(frozen=True)
class AudioClip:
    clip_id: str
    class_label: int
    file_path: str
    duration: float | None = None
    fold: int | None = None
    category: str | None = None


@dataclass
class CorpusManifest:
    clips: list[AudioClip]
    class_count: int
    clips_per_class: int

    def by_id(self) -> dict[str, AudioClip]:
        return {c.clip_id: c for c in self.clips}

    def class_names(self) -> list[str]:
        names = {c.class_label: c.category or str(c.class_label) for c in self.clips}
        return [names.get(k, str(k)) for k in range(self.class_count)]

    def write(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["clip_id", "class_label", "category", "fold", "file_path"])
            for c in self.clips:
                w.writerow([c.clip_id, c.class_label, c.category or "", c.fold or "", c.file_path])


@dataclass
class SplitAssignment:
    mapping: dict[str, str]
    seed: int
    ratios: tuple[int, ...] = (8, 1, 1)

    def ids(self, split: str) -> list[str]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return sorted(k for k, v in self.mapping.items() if v == split)

    def write(self, path: str | Path) -> None:
        """Flat `clip_id,split` table, sorted by clip_id."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["clip_id", "split"])
            for clip_id in sorted(self.mapping):
                w.writerow([clip_id, self.mapping[clip_id]])

    @classmethod
    def read(cls, path: str | Path, seed: int = -1) -> "SplitAssignment":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls({r["clip_id"]: r["split"] for r in rows}, seed)


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def ingest_esc50(root_path: str | Path, n_classes: int = 50) -> CorpusManifest:
    """Read ``meta/esc50.csv`` under *root_path* and validate the audio files."""
    root = Path(root_path)
    meta = root / METADATA_RELPATH
    if not meta.is_file():
        raise DataError(f"metadata not found: {meta}")

    with open(meta, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"filename", "fold", "target", "category"} - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"metadata table lacks columns {sorted(missing)}")
        rows = list(reader)

    clips = []
    seen = set()
    for row in rows:
        fname = row["filename"]
        clip_id = Path(fname).stem
        if clip_id in seen:
            raise DataError(f"duplicate clip_id {clip_id!r}")
        seen.add(clip_id)
        label = int(row["target"])
        if not 0 <= label < n_classes:
            raise DataError(f"clip {clip_id!r}: class label {label} outside [0, {n_classes})")
        path = root / AUDIO_DIRNAME / fname
        if not path.is_file():
            raise DataError(f"audio file missing for clip {clip_id!r}: {path}")
        clips.append(AudioClip(clip_id, label, str(path), fold=int(row["fold"]),
                               category=row["category"]))

    counts = Counter(c.class_label for c in clips)
    empty = [k for k in range(n_classes) if counts[k] == 0]
    if empty:
        raise DataError(f"classes with zero clips: {empty}")
    per_class = set(counts.values())
    if len(per_class) != 1:
        raise DataError(f"non-uniform clips per class: {dict(sorted(counts.items()))}")
    clips.sort(key=lambda c: (c.class_label, c.clip_id))
    return CorpusManifest(clips, n_classes, per_class.pop())


def make_splits(manifest: CorpusManifest, ratios=(8, 1, 1), seed: int = 0) -> SplitAssignment:
    """Shuffle each class with *seed* and cut it by *ratios*.

    Counts are floor(n * r / sum(r)); any remainder goes to train.
    """
    ratios = tuple(int(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigError(f"ratios must be three non-negative integers, got {ratios}")
    total = sum(ratios)
    if total == 0:
        raise ConfigError("ratio sum is zero")

    per_class = defaultdict(list)
    for c in manifest.clips:
        per_class[c.class_label].append(c.clip_id)

    rng = np.random.default_rng(seed)
    mapping = {}
    for label in sorted(per_class):
        ids = sorted(per_class[label])
        if len(ids) < total:
            raise DataError(f"class {label} has {len(ids)} clips, fewer than ratio sum {total}")
        n_val = len(ids) * ratios[1] // total
        n_test = len(ids) * ratios[2] // total
        n_train = len(ids) - n_val - n_test
        order = rng.permutation(len(ids))
        for rank, idx in enumerate(order):
            if rank < n_train:
                split = "train"
            elif rank < n_train + n_val:
                split = "validation"
            else:
                split = "test"
            mapping[ids[idx]] = split
    return SplitAssignment(mapping, seed, ratios)


def _to_float(data: np.ndarray) -> np.ndarray:
    if data.dtype.kind == "f":
        return data.astype(np.float64)
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    info = np.iinfo(data.dtype)
    return data.astype(np.float64) / float(-info.min)


def load_waveform(clip: AudioClip, target_rate: int = 16000) -> Waveform:
    """Decode a WAV file, down-mix to mono and resample to *target_rate*."""
    try:
        rate, data = wavfile.read(clip.file_path)
    except Exception as exc:  # scipy raises ValueError/EOFError/etc. on corrupt files
        raise DataError(f"cannot decode clip {clip.clip_id!r}: {exc}") from exc
    if data.size == 0:
        raise DataError(f"clip {clip.clip_id!r} has zero-length audio")
    x = _to_float(data)
    if x.ndim == 2:
        x = x.mean(axis=1)
    if rate != target_rate:
        g = math.gcd(int(rate), int(target_rate))
        x = signal.resample_poly(x, target_rate // g, rate // g)
    return Waveform(x, target_rate)


def random_crop(w: Waveform, duration: float, seed: int | np.random.Generator = 0) -> Waveform:
    """Uniform random crop of *duration* seconds; short inputs are zero-padded at the tail."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = int(round(duration * w.sample_rate))
    x = w.samples
    if len(x) <= n:
        out = np.zeros(n)
        out[: len(x)] = x
        return Waveform(out, w.sample_rate)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    start = int(rng.integers(0, len(x) - n + 1))
    return Waveform(x[start:start + n].copy(), w.sample_rate)
