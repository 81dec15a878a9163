"""Acoustic event classification over a bandwidth-limited LED-to-camera link."""

from .channel import CameraConfig, ChannelParams, latent_capacity, transmit
from .config import ExperimentConfig, load_config
from .dataset import Waveform
from .errors import BlinkyError, ConfigError, DataError, TrainingDivergence
from .metrics import macro_f1

__all__ = [
    "BlinkyError",
    "CameraConfig",
    "ChannelParams",
    "ConfigError",
    "DataError",
    "ExperimentConfig",
    "TrainingDivergence",
    "Waveform",
    "latent_capacity",
    "load_config",
    "macro_f1",
    "transmit",
]
