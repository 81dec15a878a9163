"""Encoder/decoder networks, the ResNet-18 classifier and the checkpoint bundle."""

from __future__ import annotations

import io
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F
from torchvision.models import resnet18

from .errors import ConfigError

PARAM_BUDGET = (440_000, 595_000)
BYTES_PER_PARAM = 4


@dataclass
class EncoderConfig:
    mel_bands: int = 80
    n_frames: int = 501
    latent_dim: int = 300
    stem_channels: int = 128
    stem_kernel: int = 5
    stem_stride: int = 2
    attention_heads: int = 4
    conv_channel_widths: tuple[int, ...] = (128, 160, 192, 224)
    downsample_strides: tuple[int, ...] = (2, 2, 2, 2)
    bottleneck_channels: int = 16
    output_squash: str = "bounded"
    enforce_budget: bool = True

    def __post_init__(self):
        self.conv_channel_widths = tuple(self.conv_channel_widths)
        self.downsample_strides = tuple(self.downsample_strides)
        if len(self.conv_channel_widths) != len(self.downsample_strides):
            raise ConfigError("conv_channel_widths and downsample_strides differ in length")
        if self.output_squash not in ("bounded", "unbounded"):
            raise ConfigError(f"unknown output_squash {self.output_squash!r}")
        if self.stem_channels % self.attention_heads:
            raise ConfigError("stem_channels must be divisible by attention_heads")

    def frame_counts(self) -> list[int]:
        """Time length after the stem and after each downsampling conv."""
        t = (self.n_frames + 2 * (self.stem_kernel // 2) - self.stem_kernel) // self.stem_stride + 1
        counts = [t]
        for s in self.downsample_strides:
            t = (t + 2 - 3) // s + 1
            counts.append(t)
        return counts

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channel_widths"] = list(self.conv_channel_widths)
        d["downsample_strides"] = list(self.downsample_strides)
        return d


class SelfAttention(nn.Module):
    """Pre-norm multi-head self-attention over frames with a residual connection."""

    def __init__(self, channels: int, heads: int):
        super().__init__()
        self.heads = heads
        self.norm = nn.LayerNorm(channels)
        self.qkv = nn.Linear(channels, 3 * channels)
        self.out = nn.Linear(channels, channels)

    def forward(self, x):  # x: (B, C, T)
        b, c, t = x.shape
        h = self.norm(x.transpose(1, 2))
        q, k, v = self.qkv(h).reshape(b, t, 3, self.heads, c // self.heads).permute(2, 0, 3, 1, 4)
        scores = (q @ k.transpose(-1, -2)) / (c // self.heads) ** 0.5
        y = scores.softmax(dim=-1) @ v
        y = self.out(y.transpose(1, 2).reshape(b, t, c))
        return x + y.transpose(1, 2)

    def working_set_bytes(self, x: torch.Tensor) -> int:
        """Live tensors at the softmax: residual input, q/k/v and the score matrix."""
        b, c, t = x.shape
        return x.element_size() * b * (c * t + 3 * c * t + self.heads * t * t)


def _conv_block(c_in, c_out, stride):
    return nn.Sequential(
        nn.Conv1d(c_in, c_out, 3, stride=stride, padding=1),
        nn.BatchNorm1d(c_out),
        nn.GELU(),
    )


class Encoder(nn.Module):
    """Conv stem -> self-attention -> strided conv stack -> dense projection to the latent."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.stem = nn.Sequential(
            nn.Conv1d(cfg.mel_bands, cfg.stem_channels, cfg.stem_kernel,
                      stride=cfg.stem_stride, padding=cfg.stem_kernel // 2),
            nn.GELU(),
        )
        self.attention = SelfAttention(cfg.stem_channels, cfg.attention_heads)
        widths = (cfg.stem_channels, *cfg.conv_channel_widths)
        self.downsample = nn.Sequential(*[
            _conv_block(widths[i], widths[i + 1], s) for i, s in enumerate(cfg.downsample_strides)
        ])
        self.bottleneck = nn.Conv1d(widths[-1], cfg.bottleneck_channels, 1)
        self.project = nn.Linear(cfg.bottleneck_channels * cfg.frame_counts()[-1], cfg.latent_dim)

    def forward(self, X):  # X: (B, mel, frames)
        if X.dim() != 3 or X.shape[1:] != (self.cfg.mel_bands, self.cfg.n_frames):
            raise ValueError(f"encoder expects (B, {self.cfg.mel_bands}, {self.cfg.n_frames}), "
                             f"got {tuple(X.shape)}")
        h = self.attention(self.stem(X))
        h = self.bottleneck(self.downsample(h))
        z = self.project(h.flatten(1))
        return torch.sigmoid(z) if self.cfg.output_squash == "bounded" else z


class Decoder(nn.Module):
    """Mirror of the encoder built from transposed convolutions; no attention."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.t0 = cfg.frame_counts()[-1]
        widths = (*reversed(cfg.conv_channel_widths), cfg.stem_channels)
        self.expand = nn.Linear(cfg.latent_dim, cfg.bottleneck_channels * self.t0)
        self.unbottleneck = nn.Conv1d(cfg.bottleneck_channels, widths[0], 1)
        n_up = len(cfg.downsample_strides) + 1  # plus one for the stem stride
        chans = list(widths) + [widths[-1]] * (n_up + 1 - len(widths))
        self.upsample = nn.Sequential(*[
            nn.Sequential(nn.ConvTranspose1d(chans[i], chans[i + 1], 4, stride=2, padding=1),
                          nn.BatchNorm1d(chans[i + 1]), nn.GELU())
            for i in range(n_up)
        ])
        self.head = nn.Conv1d(chans[n_up], cfg.mel_bands, 3, padding=1)

    def forward(self, z):
        if z.dim() != 2 or z.shape[1] != self.cfg.latent_dim:
            raise ValueError(f"decoder expects (B, {self.cfg.latent_dim}), got {tuple(z.shape)}")
        h = self.expand(z).reshape(z.shape[0], self.cfg.bottleneck_channels, self.t0)
        h = self.head(self.upsample(F.gelu(self.unbottleneck(h))))
        t = self.cfg.n_frames
        if h.shape[-1] < t:
            h = F.pad(h, (0, t - h.shape[-1]))
        return h[..., :t]


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def build_encoder(cfg: EncoderConfig | None = None) -> Encoder:
    cfg = cfg or EncoderConfig()
    enc = Encoder(cfg)
    n = count_parameters(enc)
    lo, hi = PARAM_BUDGET
    if cfg.enforce_budget and not lo <= n <= hi:
        raise ConfigError(f"encoder has {n} trainable parameters, outside budget [{lo}, {hi}]")
    return enc


def build_decoder(cfg: EncoderConfig | None = None) -> Decoder:
    return Decoder(cfg or EncoderConfig())


def encode(enc: Encoder, X) -> torch.Tensor:
    """Inference-mode encoding of a (B, mel, frames) batch."""
    X = torch.as_tensor(X, dtype=torch.float32)
    enc.eval()
    with torch.no_grad():
        return enc(X)


def decode(dec: Decoder, z) -> torch.Tensor:
    z = torch.as_tensor(z, dtype=torch.float32)
    dec.eval()
    with torch.no_grad():
        return dec(z)


LAYOUT_CHANNELS = {"grid": 1, "logmel_ref": 5}


def build_classifier(input_layout: str = "grid", n_classes: int = 50,
                     in_channels: int | None = None) -> nn.Module:
    """ResNet-18 whose first convolution accepts the layout's channel count.

    ``grid`` is a single-channel image (stacked LED rows of every Blinky);
    ``logmel_ref`` is one log-Mel channel per Blinky.
    """
    if input_layout not in LAYOUT_CHANNELS:
        raise ConfigError(f"unknown classifier layout {input_layout!r}")
    ch = in_channels or LAYOUT_CHANNELS[input_layout]
    net = resnet18(weights=None, num_classes=n_classes)
    net.conv1 = nn.Conv2d(ch, 64, kernel_size=7, stride=2, padding=3, bias=False)
    return net


def count_and_footprint(model: nn.Module, input_shape=(1, 80, 501)) -> tuple[int, int]:
    """Trainable parameter count and inference bytes (parameters + peak activations, fp32).

    Peak activation is the largest working set of any single layer during one
    forward pass: its input plus its output, or the attention working set.
    """
    count = count_parameters(model)
    peak = 0
    hooks = []

    def hook(mod, inputs, output):
        nonlocal peak
        x = inputs[0]
        if isinstance(mod, SelfAttention):
            live = mod.working_set_bytes(x) + output.numel() * BYTES_PER_PARAM
        else:
            live = (x.numel() + output.numel()) * BYTES_PER_PARAM
        peak = max(peak, live)

    for mod in model.modules():
        is_leaf = not any(True for _ in mod.children())
        if isinstance(mod, SelfAttention) or (is_leaf and not _inside_attention(model, mod)):
            hooks.append(mod.register_forward_hook(hook))
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            model(torch.zeros(input_shape))
    finally:
        for h in hooks:
            h.remove()
        model.train(was_training)
    return count, count * BYTES_PER_PARAM + peak


def _inside_attention(root: nn.Module, mod: nn.Module) -> bool:
    return any(mod in set(a.modules()) for a in root.modules() if isinstance(a, SelfAttention))


def state_hash(module: nn.Module) -> str:
    import hashlib

    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


@dataclass
class ModelBundle:
    """Everything needed to embed and classify: weights, configs, statistics, metadata."""

    encoder_config: dict | None = None
    encoder_state: dict | None = None
    decoder_state: dict | None = None
    classifier_layout: str | None = None
    classifier_in_channels: int | None = None
    n_classes: int = 50
    classifier_state: dict | None = None
    spectrogram_stats: dict | None = None
    latent_stats: dict | None = None
    input_mean: np.ndarray | None = None
    input_std: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def encoder(self) -> Encoder:
        if self.encoder_state is None:
            raise ValueError("bundle has no encoder")
        enc = Encoder(EncoderConfig(**self.encoder_config))
        enc.load_state_dict(self.encoder_state)
        return enc.eval()

    def decoder(self) -> Decoder:
        if self.decoder_state is None:
            raise ValueError("bundle has no decoder")
        dec = Decoder(EncoderConfig(**self.encoder_config))
        dec.load_state_dict(self.decoder_state)
        return dec.eval()

    def classifier(self) -> nn.Module:
        if self.classifier_state is None:
            raise ValueError("bundle has no classifier")
        net = build_classifier(self.classifier_layout, self.n_classes, self.classifier_in_channels)
        net.load_state_dict(self.classifier_state)
        return net.eval()

    def to_bytes(self) -> bytes:
        payload = {k: v for k, v in asdict(self).items()}
        for k in ("input_mean", "input_std"):
            if payload[k] is not None:
                payload[k] = torch.from_numpy(np.ascontiguousarray(payload[k]))
        buf = io.BytesIO()
        torch.save(payload, buf)
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "ModelBundle":
        payload = torch.load(io.BytesIO(Path(path).read_bytes()), weights_only=False)
        for k in ("input_mean", "input_std"):
            if payload.get(k) is not None:
                payload[k] = payload[k].numpy()
        return cls(**payload)


def _detached_state(module: nn.Module) -> dict:
    return {k: v.detach().cpu().clone() for k, v in module.state_dict().items()}
