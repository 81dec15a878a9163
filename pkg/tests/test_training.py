import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from torch import nn

from blinky_aec import training
from blinky_aec.errors import ConfigError, TrainingDivergence
from blinky_aec.models import EncoderConfig, build_decoder, build_encoder, state_hash
from blinky_aec.training import (ClassifierTrainConfig, PretrainConfig, bc_mix, current_lr,
                                 loss_kl, loss_recon, loss_recon_robust, make_scheduler,
                                 pretrain_autoencoder, select_best, train_classifier)

TINY = EncoderConfig(mel_bands=8, n_frames=33, latent_dim=12, stem_channels=8, attention_heads=2,
                     conv_channel_widths=(8, 8), downsample_strides=(2, 2),
                     bottleneck_channels=4, enforce_budget=False)


def _corpus(n=24, seed=0):
    rng = np.random.default_rng(seed)
    base = rng.standard_normal((4, 8, 33))
    return (base[rng.integers(0, 4, n)] + 0.1 * rng.standard_normal((n, 8, 33))).astype(np.float32)


# ------------------------------------------------------------------ losses


def test_loss_recon_examples():
    X = torch.randn(3, 4, 5)
    assert loss_recon(X, X).item() == 0
    assert loss_recon(torch.tensor([[[0.0]]]), torch.tensor([[[2.0]]])).item() == 4
    with pytest.raises(ValueError):
        loss_recon(torch.zeros(1, 2), torch.zeros(1, 3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_loss_recon_nonnegative(seed):
    g = torch.Generator().manual_seed(seed)
    assert loss_recon(torch.randn(2, 3, generator=g), torch.randn(2, 3, generator=g)) >= 0


@pytest.fixture(scope="module")
def tiny_ae():
    torch.manual_seed(0)
    enc = build_encoder(TINY).eval()
    dec = build_decoder(TINY).eval()
    return enc, dec


def test_robust_sigma_zero_equals_plain(tiny_ae):
    enc, dec = tiny_ae
    X = torch.randn(3, 8, 33)
    with torch.no_grad():
        assert loss_recon_robust(X, enc, dec, 0.0, seed=5).item() == loss_recon(X, dec(enc(X))).item()


def test_robust_deterministic_under_seed(tiny_ae):
    enc, dec = tiny_ae
    X = torch.randn(3, 8, 33)
    with torch.no_grad():
        a = loss_recon_robust(X, enc, dec, 0.05, seed=11).item()
        b = loss_recon_robust(X, enc, dec, 0.05, seed=11).item()
    assert a == b
    with pytest.raises(ValueError):
        loss_recon_robust(X, enc, dec, -0.1)


def test_robust_noise_penalty_monte_carlo():
    # identity encoder, linear decoder W: E[loss] = loss(sigma=0) + sigma^2 ||W||_F^2
    sigma = 0.05
    W = torch.tensor([[1.0, 0.2], [-0.3, 0.9]], dtype=torch.float64)
    enc = nn.Identity()
    dec = nn.Linear(2, 2, bias=False).double()
    with torch.no_grad():
        dec.weight.copy_(W)
    X = torch.tensor([[1.0, -1.0], [0.5, 2.0]], dtype=torch.float64)
    with torch.no_grad():
        clean = loss_recon_robust(X, enc, dec, 0.0).item()
        noisy = np.mean([loss_recon_robust(X, enc, dec, sigma, seed=s).item() for s in range(100)])
    penalty = sigma ** 2 * W.pow(2).sum().item()
    assert noisy > clean
    # cross term has zero mean; a 100-draw average lands well within 50% of the penalty
    assert abs((noisy - clean) - penalty) < 0.5 * penalty + 2 * sigma * 0.5


def test_bc_mix_examples():
    a, b = np.ones(4), np.zeros(4)
    s = bc_mix((a, 3), (b, 7), 0.5)
    expected = np.zeros(50)
    expected[[3, 7]] = 0.5
    np.testing.assert_array_equal(s.soft_label, expected)
    np.testing.assert_array_equal(bc_mix((a, 3), (b, 7), 1.0).mixed_input, a)
    with pytest.raises(ValueError):
        bc_mix((a, 3), (b, 3), 0.5)
    with pytest.raises(ValueError):
        bc_mix((a, 3), (b, 7), 1.5)


@settings(max_examples=100, deadline=None)
@given(lam=st.floats(0, 1), ya=st.integers(0, 49), yb=st.integers(0, 49))
def test_bc_label_simplex(lam, ya, yb):
    s = bc_mix((np.zeros(2), ya), (np.ones(2), yb), lam, strict=False)
    assert np.all(s.soft_label >= 0)
    assert abs(s.soft_label.sum() - 1) <= 1e-6


def test_kl_examples():
    p = torch.tensor([[0.2, 0.3, 0.5]], dtype=torch.float64)
    assert loss_kl(p, p.log()).item() == pytest.approx(0, abs=1e-15)
    val = loss_kl(torch.tensor([1.0, 0.0]), torch.log(torch.tensor([0.5, 0.5]))).item()
    assert val == pytest.approx(math.log(2), abs=1e-6)
    with pytest.raises(ValueError):
        loss_kl(torch.tensor([0.7, 0.7]), torch.log(torch.tensor([0.5, 0.5])))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_kl_nonnegative(seed):
    g = torch.Generator().manual_seed(seed)
    t = torch.rand(3, 5, generator=g, dtype=torch.float64)
    t[:, 0] = 0  # exercise 0 * log 0
    t = t / t.sum(-1, keepdim=True)
    logp = torch.randn(3, 5, generator=g, dtype=torch.float64).log_softmax(-1)
    assert loss_kl(t, logp).item() >= -1e-12


def test_select_best_examples():
    assert select_best([(1, 0.2, "e1"), (2, 0.5, "e2"), (3, 0.4, "e3")]) == "e2"
    assert select_best([(1, 0.5, "e1"), (2, 0.5, "e2")]) == "e1"
    with pytest.raises(ValueError):
        select_best([])


def test_scheduler_contract():
    p = nn.Parameter(torch.zeros(1))
    opt = torch.optim.Adam([p], lr=1e-2)
    sched = make_scheduler(opt, factor=0.5, patience=2)
    lrs = [current_lr(opt)]
    for loss in [1.0, 0.9, 0.9, 0.9, 0.9, 0.89995, 0.9, 0.9, 0.9, 0.5]:
        sched.step(loss)
        lrs.append(current_lr(opt))
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))
    for a, b in zip(lrs, lrs[1:]):
        if b != a:
            assert b == pytest.approx(0.5 * a, rel=1e-12)
    # improvements below 1e-4 absolute do not reset patience
    assert lrs[-1] == pytest.approx(1e-2 * 0.25)


def test_config_validation():
    with pytest.raises(ConfigError):
        PretrainConfig(plateau_factor=1.0)
    with pytest.raises(ConfigError):
        ClassifierTrainConfig(batch_size=0)
    assert PretrainConfig.full().batch_size == 1280


# ------------------------------------------------------------- pretraining


def test_pretrain_sigma_zero_matches_plain_objective(monkeypatch):
    corpus = _corpus()
    cfg = PretrainConfig(epochs=2, batch_size=8, latent_noise_sigma=0.0, seed=3)
    a = pretrain_autoencoder(corpus, cfg, TINY)
    monkeypatch.setattr(training, "loss_recon_robust",
                        lambda X, enc, dec, sigma, seed=0: loss_recon(X, dec(enc(X))))
    b = pretrain_autoencoder(corpus, cfg, TINY)
    for k in a.encoder_state:
        assert torch.equal(a.encoder_state[k], b.encoder_state[k])


def test_pretrain_val_loss_decreases(tmp_path):
    log = tmp_path / "curves.jsonl"
    b = pretrain_autoencoder(_corpus(48), PretrainConfig(epochs=8, batch_size=8, seed=0), TINY,
                             log_path=log)
    assert b.metadata["best_val_loss"] < b.metadata["initial_val_loss"]
    rows = [json.loads(line) for line in log.read_text().splitlines()]
    assert set(rows[0]) == {"epoch", "split", "metric", "value", "learning_rate"}
    assert rows[0]["epoch"] == 0


def test_pretrain_resume_zero_epochs_identical():
    corpus = _corpus()
    cfg = PretrainConfig(epochs=2, batch_size=8, seed=1)
    first = pretrain_autoencoder(corpus, cfg, TINY)
    again = pretrain_autoencoder(corpus, cfg, TINY, resume=first)
    for k in first.encoder_state:
        assert torch.equal(first.encoder_state[k], again.encoder_state[k])
    st0, st1 = first.metadata["train_state"], again.metadata["train_state"]
    for k in st0["encoder_state"]:
        assert torch.equal(st0["encoder_state"][k], st1["encoder_state"][k])


def test_pretrain_seed_reproducible():
    corpus = _corpus()
    cfg = PretrainConfig(epochs=1, batch_size=8, seed=4)
    a = pretrain_autoencoder(corpus, cfg, TINY)
    b = pretrain_autoencoder(corpus, cfg, TINY)
    assert a.metadata["best_val_loss"] == b.metadata["best_val_loss"]


def test_pretrain_errors():
    with pytest.raises(ConfigError):
        pretrain_autoencoder(np.zeros((0, 8, 33)), PretrainConfig(epochs=1), TINY)
    bad = _corpus()
    bad[0, 0, 0] = np.nan
    with pytest.raises(TrainingDivergence):
        pretrain_autoencoder(bad, PretrainConfig(epochs=1, batch_size=64), TINY)


# ------------------------------------------------------ classifier training


def _toy_grid(n=32, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.normal(0, 0.3, (n, 1, 8, 16)).astype(np.float32)
    x[y == 1, :, :4] += 1.0
    return x, y


def test_classifier_without_mixing_fits_toy():
    x, y = _toy_grid()
    cfg = ClassifierTrainConfig(epochs=12, batch_size=8, initial_lr=1e-3, bc_mixing=False, seed=0)
    b = train_classifier(x, y, x, y, cfg, n_classes=2)
    net = b.classifier()
    with torch.no_grad():
        acc = (net(torch.from_numpy(x)).argmax(-1).numpy() == y).mean()
    assert acc >= 0.9


def _latent_features(enc):
    def features(xb, idx, training_, epoch):
        return enc(xb).view(len(xb), 1, 3, 4)
    return features


def test_frozen_encoder_unchanged_and_e2e_changes():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((16, 8, 33)).astype(np.float32)
    y = np.arange(16) % 2
    cfg = ClassifierTrainConfig(epochs=1, batch_size=8, seed=0)

    torch.manual_seed(0)
    enc = build_encoder(TINY)
    before = state_hash(enc)
    with torch.no_grad():
        z = enc.eval()(torch.from_numpy(x)).view(16, 1, 3, 4).numpy()
    train_classifier(z, y, z, y, cfg, "frozen_encoder", n_classes=2)
    assert state_hash(enc) == before

    out = train_classifier(x, y, x, y, cfg, "end_to_end", n_classes=2, encoder=enc,
                           features=_latent_features(enc))
    assert state_hash(enc) != before
    assert out.encoder_state is not None and out.metadata["classifier_mode"] == "end_to_end"


def test_e2e_needs_channel():
    x, y = _toy_grid(8)
    with pytest.raises(ConfigError):
        train_classifier(x, y, x, y, ClassifierTrainConfig(epochs=1), "end_to_end", n_classes=2)


def test_classifier_records_history_and_best(tmp_path):
    x, y = _toy_grid(16)
    cfg = ClassifierTrainConfig(epochs=3, batch_size=8, initial_lr=1e-3, seed=2)
    b = train_classifier(x, y, x, y, cfg, n_classes=2, log_path=tmp_path / "c.jsonl")
    hist = b.metadata["history"]
    assert [e for e, _ in hist] == [1, 2, 3]
    best = max(f for _, f in hist)
    assert b.metadata["best_val_f1"] == best
    assert b.metadata["best_epoch"] == min(e for e, f in hist if f == best)
    metrics = {json.loads(r)["metric"] for r in (tmp_path / "c.jsonl").read_text().splitlines()}
    assert metrics == {"kl_loss", "macro_f1"}
