import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from blinky_aec.dataset import Waveform
from blinky_aec.dsp import (LOG_FLOOR, AffineStats, hz_to_mel, latent_normalize, logmel,
                            mel_filterbank, power_spectrogram, sound_power_embedding)


def _sine(freq, n=80000, rate=16000):
    return Waveform(np.sin(2 * np.pi * freq * np.arange(n) / rate), rate)


def test_logmel_shape_5s():
    X = logmel(Waveform(np.random.default_rng(0).standard_normal(80000), 16000))
    assert X.values.shape == (80, 80000 // 160 + 1) == (80, 501)


def test_logmel_silence_is_floor():
    X = logmel(Waveform(np.zeros(16000), 16000)).values
    np.testing.assert_allclose(X, np.log(LOG_FLOOR))


def test_power_spectrogram_matches_torch_stft():
    x = np.random.default_rng(1).standard_normal(16000)
    ref = torch.stft(torch.from_numpy(x), n_fft=512, hop_length=160, win_length=400,
                     window=torch.hann_window(400, dtype=torch.float64), center=True,
                     pad_mode="reflect", return_complex=True).abs().pow(2).numpy()
    np.testing.assert_allclose(power_spectrogram(x), ref, rtol=1e-9, atol=1e-9)


def test_frame_matches_direct_dft():
    # oracle: explicit DFT sum of one reflect-padded, windowed frame
    x = _sine(1000).samples
    frame_idx = 100
    start = frame_idx * 160 - 256  # centered frame, fully inside the signal here
    n = np.arange(512)
    win = np.zeros(512)
    win[56:456] = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(400) / 400)
    seg = x[start:start + 512] * win
    k = np.arange(257)[:, None]
    dft = (seg[None, :] * np.exp(-2j * np.pi * k * n[None, :] / 512)).sum(axis=1)
    np.testing.assert_allclose(power_spectrogram(x)[:, frame_idx], np.abs(dft) ** 2,
                               rtol=1e-8, atol=1e-6)


def test_sine_energy_in_expected_band():
    X = logmel(_sine(1000)).values
    fb = mel_filterbank()
    freqs = np.linspace(0, 8000, 257)
    expected = int(np.argmax(fb[:, np.argmin(np.abs(freqs - 1000))]))
    bands = X[:, 5:-5].argmax(axis=0)
    assert np.all(bands == expected)
    # stationary across interior frames
    assert np.ptp(X[expected, 5:-5]) < 1e-3


def test_mel_filterbank_htk_centers():
    fb = mel_filterbank()
    assert fb.shape == (80, 257)
    assert np.all(fb >= 0)
    freqs = np.linspace(0, 8000, 257)
    centers = hz_to_mel(freqs[fb.argmax(axis=1)])
    assert np.all(np.diff(centers) >= 0)


def test_logmel_errors():
    with pytest.raises(ValueError, match="16000"):
        logmel(Waveform(np.zeros(1000), 8000))
    with pytest.raises(ValueError, match="shorter"):
        logmel(Waveform(np.zeros(300), 16000))


def test_logmel_deterministic_and_gain_monotone():
    w = Waveform(np.random.default_rng(2).standard_normal(8000), 16000)
    a, b = logmel(w).values, logmel(w).values
    np.testing.assert_array_equal(a, b)
    louder = logmel(Waveform(w.samples * 1.7, 16000)).values
    assert np.all(louder >= a)


def test_sound_power_examples():
    np.testing.assert_array_equal(sound_power_embedding(Waveform([1, -2, 3], 16000)), [1, 4, 9])
    assert not sound_power_embedding(Waveform(np.zeros(5), 16000)).any()
    assert sound_power_embedding(Waveform(np.zeros(80000), 16000)).shape == (80000,)


@settings(max_examples=50, deadline=None)
@given(x=arrays(np.float64, st.integers(1, 64), elements=st.floats(-10, 10)),
       g=st.floats(0.1, 10))
def test_sound_power_scale_law(x, g):
    p = sound_power_embedding(Waveform(x, 16000))
    assert np.all(p >= 0)
    np.testing.assert_allclose(sound_power_embedding(Waveform(g * x, 16000)), g ** 2 * p,
                               rtol=1e-12, atol=1e-300)


def test_latent_normalize_examples():
    np.testing.assert_allclose(latent_normalize([-1, 0, 1], AffineStats(-1, 2)), [0, 0.5, 1])
    z = np.array([0.0, 0.3, 1.0])
    np.testing.assert_array_equal(latent_normalize(z, AffineStats(0, 1)), z)
    np.testing.assert_array_equal(latent_normalize([5], AffineStats(0, 1)), [1])
    with pytest.raises(ValueError):
        AffineStats(0, 0)
    with pytest.raises(ValueError):
        AffineStats(0, -1)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 32), elements=st.floats(-5, 5)))
def test_latent_normalize_idempotent(z):
    once = latent_normalize(z, AffineStats(0, 1))
    np.testing.assert_array_equal(latent_normalize(once, AffineStats(0, 1)), once)
