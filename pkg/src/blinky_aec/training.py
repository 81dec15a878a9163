"""Losses, autoencoder pre-training and classifier training."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, TrainingDivergence
from .metrics import macro_f1
from .models import (Encoder, EncoderConfig, ModelBundle, _detached_state,
                     build_classifier, build_decoder, build_encoder)

log = logging.getLogger(__name__)

GRAD_CLIP_NORM = 5.0
PLATEAU_THRESHOLD = 1e-4
SIMPLEX_TOL = 1e-6


@dataclass
class PretrainConfig:
    epochs: int = 30
    batch_size: int = 64
    initial_lr: float = 1e-3
    plateau_factor: float = 0.1
    plateau_patience: int = 10
    latent_noise_sigma: float = 0.05
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        _check_common(self.epochs, self.plateau_factor)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.latent_noise_sigma < 0:
            raise ConfigError("latent_noise_sigma must be >= 0")

    @classmethod
    def full(cls, **kw) -> "PretrainConfig":
        return cls(**{"epochs": 300, "batch_size": 1280, **kw})


@dataclass
class ClassifierTrainConfig:
    epochs: int = 60
    batch_size: int = 64
    initial_lr: float = 1e-2
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    bc_mixing: bool = True
    encoder_frozen: bool = True
    seed: int = 0

    def __post_init__(self):
        _check_common(self.epochs, self.plateau_factor)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


def _check_common(epochs, factor):
    if epochs < 0:
        raise ConfigError("epochs must be >= 0")
    if not 0 < factor < 1:
        raise ConfigError(f"plateau_factor must lie in (0, 1), got {factor}")


@dataclass
class BCMixSample:
    mixed_input: np.ndarray | torch.Tensor
    soft_label: np.ndarray
    lam: float


# ------------------------------------------------------------------ losses


def loss_recon(X: torch.Tensor, X_hat: torch.Tensor) -> torch.Tensor:
    """Batch mean of the squared Frobenius norm of the residual."""
    if X.shape != X_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(X.shape)} vs {tuple(X_hat.shape)}")
    return (X - X_hat).pow(2).flatten(1).sum(dim=1).mean()


def _generator(seed) -> torch.Generator:
    if isinstance(seed, torch.Generator):
        return seed
    return torch.Generator().manual_seed(int(seed))


def loss_recon_robust(X: torch.Tensor, enc: nn.Module, dec: nn.Module, sigma: float,
                      seed=0) -> torch.Tensor:
    """Reconstruction loss with N(0, sigma^2) noise added to the latent.

    *seed* is an int or a ``torch.Generator`` (for fresh noise across batches).
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    z = enc(X)
    if sigma > 0:
        eps = torch.randn(z.shape, generator=_generator(seed), dtype=z.dtype)
        z = z + sigma * eps
    return loss_recon(X, dec(z))


def one_hot(label: int, n_classes: int) -> np.ndarray:
    v = np.zeros(n_classes)
    v[label] = 1.0
    return v


def bc_mix(sample_a, sample_b, lam: float, n_classes: int = 50, strict: bool = True) -> BCMixSample:
    """Between-class mix: ``lam * a + (1 - lam) * b`` on inputs and one-hot labels."""
    (xa, ya), (xb, yb) = sample_a, sample_b
    if not 0 <= lam <= 1:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if strict and ya == yb:
        raise ValueError(f"BC mixing needs two different classes, got {ya} twice")
    mixed = lam * xa + (1 - lam) * xb
    label = lam * one_hot(ya, n_classes) + (1 - lam) * one_hot(yb, n_classes)
    return BCMixSample(mixed, label, float(lam))


def loss_kl(soft_target, predicted_log_probs) -> torch.Tensor:
    """KL(target || prediction), summed over classes and averaged over the batch."""
    t = torch.as_tensor(soft_target, dtype=torch.float64 if not torch.is_tensor(soft_target)
                        else soft_target.dtype)
    logp = torch.as_tensor(predicted_log_probs).to(t.dtype)
    if t.shape != logp.shape:
        raise ValueError(f"shape mismatch: {tuple(t.shape)} vs {tuple(logp.shape)}")
    if (t < -SIMPLEX_TOL).any() or ((t.sum(-1) - 1).abs() > SIMPLEX_TOL).any():
        raise ValueError("target is not a probability vector")
    t = t.clamp_min(0)
    terms = torch.where(t > 0, t * (torch.log(t.clamp_min(1e-300)) - logp), torch.zeros_like(t))
    per_row = terms.sum(-1)
    return per_row.mean() if per_row.dim() else per_row


# ---------------------------------------------------------- scheduler, log


def make_scheduler(optimizer, factor: float, patience: int):
    return torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, mode="min", factor=factor, patience=patience,
        threshold=PLATEAU_THRESHOLD, threshold_mode="abs")


def current_lr(optimizer) -> float:
    return float(optimizer.param_groups[0]["lr"])


class CurveLog:
    """Append-only JSON-lines training curve."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []

    def add(self, epoch: int, split: str, metric: str, value: float, learning_rate: float):
        rec = {"epoch": epoch, "split": split, "metric": metric,
               "value": float(value), "learning_rate": float(learning_rate)}
        self.records.append(rec)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(rec) + "\n")


def _check_finite(loss: torch.Tensor, where: str):
    if not torch.isfinite(loss):
        raise TrainingDivergence(f"non-finite loss ({loss.item()}) during {where}")


# -------------------------------------------------------------- pretraining


def _holdout_split(n: int, fraction: float, seed: int):
    perm = np.random.default_rng(seed).permutation(n)
    n_val = max(1, int(round(n * fraction))) if n > 1 else 0
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def pretrain_autoencoder(corpus: np.ndarray, cfg: PretrainConfig,
                         encoder_config: EncoderConfig | None = None,
                         spectrogram_stats: dict | None = None,
                         log_path: str | Path | None = None,
                         resume: ModelBundle | None = None) -> ModelBundle:
    """Adam on the (noise-robust) reconstruction objective.

    *corpus* holds standardized log-Mel matrices, shape (N, mel, frames).
    The returned bundle carries the best-validation-loss weights and the
    optimizer/scheduler state needed to resume.
    """
    corpus = np.asarray(corpus, dtype=np.float32)
    if corpus.ndim != 3 or len(corpus) == 0:
        raise ConfigError(f"pretraining corpus must be a nonempty (N, mel, frames) array, "
                          f"got shape {corpus.shape}")
    torch.manual_seed(cfg.seed)
    encoder_config = encoder_config or EncoderConfig()
    enc, dec = build_encoder(encoder_config), build_decoder(encoder_config)
    params = list(enc.parameters()) + list(dec.parameters())
    opt = torch.optim.Adam(params, lr=cfg.initial_lr)
    sched = make_scheduler(opt, cfg.plateau_factor, cfg.plateau_patience)
    train_idx, val_idx = _holdout_split(len(corpus), cfg.validation_fraction, cfg.seed)
    if len(val_idx) == 0:
        val_idx = train_idx

    start_epoch = 0
    best = {"loss": float("inf"), "epoch": 0,
            "encoder": _detached_state(enc), "decoder": _detached_state(dec)}
    if resume is not None:
        state = resume.metadata["train_state"]
        enc.load_state_dict(state["encoder_state"])
        dec.load_state_dict(state["decoder_state"])
        opt.load_state_dict(state["optimizer"])
        sched.load_state_dict(state["scheduler"])
        start_epoch = state["epoch"]
        best = {"loss": resume.metadata["best_val_loss"], "epoch": resume.metadata["best_epoch"],
                "encoder": resume.encoder_state, "decoder": resume.decoder_state}

    curve = CurveLog(log_path)
    X_all = torch.from_numpy(corpus)
    data_gen = torch.Generator().manual_seed(cfg.seed)
    noise_gen = torch.Generator().manual_seed(cfg.seed + 1)
    for _ in range(start_epoch):  # keep the data/noise streams aligned on resume
        torch.randperm(len(train_idx), generator=data_gen)

    def val_loss() -> float:
        enc.eval(), dec.eval()
        total = 0.0
        with torch.no_grad():
            for i in range(0, len(val_idx), cfg.batch_size):
                xb = X_all[val_idx[i:i + cfg.batch_size]]
                total += loss_recon(xb, dec(enc(xb))).item() * len(xb)
        return total / len(val_idx)

    if start_epoch == 0:
        initial = val_loss()
        curve.add(0, "validation", "recon_loss", initial, current_lr(opt))
        best["initial_loss"] = initial

    epoch = start_epoch
    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        enc.train(), dec.train()
        order = train_idx[torch.randperm(len(train_idx), generator=data_gen).numpy()]
        running = 0.0
        for i in range(0, len(order), cfg.batch_size):
            xb = X_all[order[i:i + cfg.batch_size]]
            loss = loss_recon_robust(xb, enc, dec, cfg.latent_noise_sigma, noise_gen)
            _check_finite(loss, f"pretraining epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(params, GRAD_CLIP_NORM)
            opt.step()
            running += loss.item() * len(xb)
        lr = current_lr(opt)
        curve.add(epoch, "train", "recon_loss", running / len(order), lr)
        v = val_loss()
        curve.add(epoch, "validation", "recon_loss", v, lr)
        if not np.isfinite(v):
            raise TrainingDivergence(f"non-finite validation loss at epoch {epoch}")
        if v < best["loss"]:
            best.update(loss=v, epoch=epoch, encoder=_detached_state(enc),
                        decoder=_detached_state(dec))
        sched.step(v)
        log.info("pretrain epoch %d: train %.4f val %.4f lr %.2e", epoch,
                 running / len(order), v, lr)

    final_epoch = max(epoch, start_epoch)
    metadata = dict(resume.metadata) if resume is not None else {}
    metadata.update({
        "kind": "autoencoder",
        "latent_noise_sigma": cfg.latent_noise_sigma,
        "pretrain_config": asdict(cfg),
        "best_epoch": best["epoch"],
        "best_val_loss": best["loss"],
        "train_state": {
            "epoch": final_epoch,
            "encoder_state": _detached_state(enc),
            "decoder_state": _detached_state(dec),
            "optimizer": copy.deepcopy(opt.state_dict()),
            "scheduler": sched.state_dict(),
        },
    })
    if "initial_loss" in best:
        metadata["initial_val_loss"] = best["initial_loss"]
    if best["epoch"] == 0 and resume is None:
        # no epoch improved on the untrained weights (or epochs == 0)
        best["encoder"], best["decoder"] = _detached_state(enc), _detached_state(dec)
    return ModelBundle(
        encoder_config=encoder_config.to_dict(),
        encoder_state=best["encoder"],
        decoder_state=best["decoder"],
        spectrogram_stats=spectrogram_stats,
        metadata=metadata,
    )


# -------------------------------------------------------- classifier training


def select_best(history):
    """Checkpoint ref with the highest validation F1; ties go to the earliest epoch."""
    if not history:
        raise ValueError("empty training history")
    epoch, f1, ref = min(history, key=lambda h: (-h[1], h[0]))
    return ref


def _partner_indices(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """For each item, a uniformly drawn index of an item from a different class."""
    n = len(labels)
    partners = rng.integers(0, n, size=n)
    clash = labels[partners] == labels
    while clash.any():
        partners[clash] = rng.integers(0, n, size=int(clash.sum()))
        clash = labels[partners] == labels
    return partners


FeatureFn = Callable[[torch.Tensor, np.ndarray, bool, int], torch.Tensor]


def train_classifier(train_inputs, train_labels, val_inputs, val_labels,
                     cfg: ClassifierTrainConfig, mode: str = "frozen_encoder",
                     layout: str = "grid", n_classes: int = 50, in_channels: int | None = None,
                     encoder: Encoder | None = None, features: FeatureFn | None = None,
                     base: ModelBundle | None = None, log_path: str | Path | None = None,
                     ) -> ModelBundle:
    """Adam + KL loss over BC-mixed batches, checkpoint chosen by validation macro-F1.

    ``frozen_encoder``: inputs are recorded classifier inputs; any encoder in
    *base* is carried along untouched. ``end_to_end``: inputs are encoder
    inputs and ``features(x, idx, training, epoch)`` maps them through
    *encoder* and a differentiable channel, so the encoder trains too.
    ``train_inputs`` may be a callable ``epoch -> array`` to re-record the
    training set every epoch.
    """
    if mode not in ("frozen_encoder", "end_to_end"):
        raise ConfigError(f"unknown training mode {mode!r}")
    if mode == "end_to_end" and (encoder is None or features is None):
        raise ConfigError("end_to_end training needs an encoder and a differentiable channel")

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    net = build_classifier(layout, n_classes, in_channels)
    params = list(net.parameters())
    if mode == "end_to_end":
        params += list(encoder.parameters())
    opt = torch.optim.Adam(params, lr=cfg.initial_lr)
    sched = make_scheduler(opt, cfg.plateau_factor, cfg.plateau_patience)
    curve = CurveLog(log_path)

    y_train = np.asarray(train_labels, dtype=np.int64)
    y_val = np.asarray(val_labels, dtype=np.int64)
    feat = features or (lambda x, idx, training, epoch: x)

    def fetch(inputs, sel):
        return torch.as_tensor(np.asarray(inputs[sel]), dtype=torch.float32)

    def batches(inputs, idx):
        for i in range(0, len(idx), cfg.batch_size):
            sel = idx[i:i + cfg.batch_size]
            yield sel, fetch(inputs, sel)

    def evaluate_val(epoch):
        net.eval()
        if encoder is not None:
            encoder.eval()
        preds, total = [], 0.0
        with torch.no_grad():
            for sel, xb in batches(val_inputs, np.arange(len(y_val))):
                logp = net(feat(xb, sel, False, epoch)).log_softmax(-1)
                target = torch.nn.functional.one_hot(torch.as_tensor(y_val[sel]), n_classes)
                total += loss_kl(target.to(logp.dtype), logp).item() * len(sel)
                preds.append(logp.argmax(-1).numpy())
        p = np.concatenate(preds)
        return total / len(y_val), macro_f1(y_val, p, n_classes)

    history = []
    best_state = None
    best_f1 = -1.0
    for epoch in range(1, cfg.epochs + 1):
        inputs = train_inputs(epoch) if callable(train_inputs) else train_inputs
        net.train()
        if mode == "end_to_end":
            encoder.train()
        order = rng.permutation(len(y_train))
        partners = _partner_indices(y_train, rng) if cfg.bc_mixing else None
        lams = rng.uniform(0.0, 1.0, size=len(y_train))
        running = 0.0
        for sel, xb in batches(inputs, order):
            xb = feat(xb, sel, True, epoch)
            ya = torch.nn.functional.one_hot(torch.as_tensor(y_train[sel]), n_classes).float()
            if cfg.bc_mixing:
                psel = partners[sel]
                xp = feat(fetch(inputs, psel), psel, True, epoch)
                yb = torch.nn.functional.one_hot(torch.as_tensor(y_train[psel]), n_classes).float()
                lam = torch.as_tensor(lams[sel], dtype=torch.float32)
                shape = (-1,) + (1,) * (xb.dim() - 1)
                xb = lam.view(shape) * xb + (1 - lam.view(shape)) * xp
                target = lam[:, None] * ya + (1 - lam[:, None]) * yb
            else:
                target = ya
            loss = loss_kl(target, net(xb).log_softmax(-1))
            _check_finite(loss, f"classifier epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(params, GRAD_CLIP_NORM)
            opt.step()
            running += loss.item() * len(sel)
        lr = current_lr(opt)
        v_loss, v_f1 = evaluate_val(epoch)
        curve.add(epoch, "train", "kl_loss", running / len(order), lr)
        curve.add(epoch, "validation", "kl_loss", v_loss, lr)
        curve.add(epoch, "validation", "macro_f1", v_f1, lr)
        history.append((epoch, v_f1, epoch))
        if v_f1 > best_f1:
            best_f1 = v_f1
            best_state = (_detached_state(net),
                          _detached_state(encoder) if mode == "end_to_end" else None)
        sched.step(v_loss)
        log.info("classifier epoch %d: train %.4f val %.4f f1 %.4f lr %.2e", epoch,
                 running / len(order), v_loss, v_f1, lr)

    if history:
        best_epoch = select_best(history)
    else:
        best_epoch = 0
        best_state = (_detached_state(net),
                      _detached_state(encoder) if mode == "end_to_end" else None)

    out = copy.copy(base) if base is not None else ModelBundle()
    out.metadata = dict(out.metadata)
    out.classifier_layout = layout
    out.classifier_in_channels = in_channels
    out.n_classes = n_classes
    out.classifier_state = best_state[0]
    if mode == "end_to_end":
        out.encoder_config = encoder.cfg.to_dict()
        out.encoder_state = best_state[1]
    out.metadata.update({
        "classifier_mode": mode,
        "classifier_config": asdict(cfg),
        "best_epoch": best_epoch,
        "best_val_f1": best_f1 if history else None,
        "history": [(e, f) for e, f, _ in history],
    })
    return out
