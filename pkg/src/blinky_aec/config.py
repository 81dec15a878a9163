"""Experiment configuration: one YAML file per campaign, every field has a default."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .acoustics import RoomScene
from .channel import SCENARIOS, CameraConfig, ChannelParams, latent_capacity
from .dsp import HOP_LENGTH
from .errors import ConfigError
from .models import EncoderConfig
from .training import ClassifierTrainConfig, PretrainConfig

MODES = ("logmel_ref", "sound_power", "end_to_end", "autoencoder", "noise_robust_autoencoder")
AE_MODES = ("autoencoder", "noise_robust_autoencoder")

ENV_DATA_ROOT = "BLINKY_DATA_ROOT"
ENV_STRICT = "BLINKY_STRICT_DETERMINISTIC"


@dataclass
class CampaignConfig:
    modes: tuple[str, ...] = MODES
    scenarios: tuple[str, ...] = ("full",)
    seeds: tuple[int, ...] = (0, 1)


@dataclass
class ExperimentConfig:
    embedding_mode: str = "noise_robust_autoencoder"
    scenario: str = "full"
    seed: int = 0
    dataset_root: str = "ESC-50"
    output_dir: str = "runs"
    profile: str = "desk"
    n_classes: int = 50
    n_blinkies: int = 5
    sample_rate: int = 16000
    split_ratios: tuple[int, int, int] = (8, 1, 1)
    split_seed: int = 0
    placement_seed: int = 0
    renoise_each_epoch: bool = False
    pretrained_bundles: dict = field(default_factory=dict)
    channel: ChannelParams = field(default_factory=ChannelParams)
    camera: CameraConfig = field(default_factory=CameraConfig)
    scene: RoomScene = field(default_factory=RoomScene)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    classifier: ClassifierTrainConfig = field(default_factory=ClassifierTrainConfig)
    campaign: CampaignConfig = field(default_factory=CampaignConfig)

    def __post_init__(self):
        self.split_ratios = tuple(self.split_ratios)
        self.validate()

    def validate(self):
        if self.embedding_mode not in MODES:
            raise ConfigError(f"unknown embedding_mode {self.embedding_mode!r}; choose from {MODES}")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.profile not in ("desk", "full"):
            raise ConfigError(f"unknown profile {self.profile!r}")
        if self.embedding_mode == "noise_robust_autoencoder" and self.pretrain.latent_noise_sigma <= 0:
            raise ConfigError("noise_robust_autoencoder needs pretrain.latent_noise_sigma > 0")
        cap = latent_capacity(self.camera)
        if self.embedding_mode in (*AE_MODES, "end_to_end") and self.encoder.latent_dim != cap:
            raise ConfigError(f"encoder latent_dim {self.encoder.latent_dim} does not match the "
                              f"camera capacity {cap}")
        if self.n_samples // HOP_LENGTH + 1 != self.encoder.n_frames:
            raise ConfigError(f"encoder n_frames {self.encoder.n_frames} does not match a "
                              f"{self.camera.window} s window")
        for m in self.campaign.modes:
            if m not in MODES:
                raise ConfigError(f"unknown campaign mode {m!r}")
        for s in self.campaign.scenarios:
            if s not in SCENARIOS:
                raise ConfigError(f"unknown campaign scenario {s!r}")

    @property
    def effective_scenario(self) -> str:
        """The log-Mel reference bypasses the channel whatever scenario is requested."""
        return "none" if self.embedding_mode == "logmel_ref" else self.scenario

    @property
    def n_samples(self) -> int:
        return int(round(self.camera.window * self.sample_rate))

    def replace(self, **changes) -> "ExperimentConfig":
        return from_dict({**to_dict(self), **changes})

    def digest(self) -> str:
        d = to_dict(self)
        for k in ("output_dir", "dataset_root", "campaign"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


_NESTED = {
    "channel": ChannelParams,
    "camera": CameraConfig,
    "scene": RoomScene,
    "encoder": EncoderConfig,
    "pretrain": PretrainConfig,
    "classifier": ClassifierTrainConfig,
    "campaign": CampaignConfig,
}


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    return obj


def to_dict(cfg: ExperimentConfig) -> dict:
    return _plain(cfg)


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def from_dict(data: dict | None) -> ExperimentConfig:
    data = dict(data or {})
    profile = data.get("profile", "desk")
    nested = {}
    for key, cls in _NESTED.items():
        section = dict(data.pop(key, None) or {})
        if key == "pretrain" and profile == "full":
            section = {"epochs": 300, "batch_size": 1280, **section}
        if key == "campaign" and profile == "full":
            section = {"scenarios": ["none", "resample", "full"], "seeds": [0, 1, 2, 3], **section}
        for k in ("dimensions", "modes", "scenarios", "seeds"):
            if k in section:
                section[k] = tuple(section[k])
        nested[key] = _build(cls, section, key)
    return _build(ExperimentConfig, {**data, **nested}, "config")


def apply_env(cfg: ExperimentConfig) -> ExperimentConfig:
    root = os.environ.get(ENV_DATA_ROOT)
    if root:
        cfg = cfg.replace(dataset_root=root)
    return cfg


def strict_deterministic() -> bool:
    return os.environ.get(ENV_STRICT, "").lower() in ("1", "true", "yes", "on")


def load_config(path: str | Path | None, **overrides) -> ExperimentConfig:
    data = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    data.update({k: v for k, v in overrides.items() if v is not None})
    return apply_env(from_dict(data))


def dump_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(to_dict(cfg), sort_keys=True))
