import numpy as np
import pytest

from blinky_aec.acoustics import (RIRSet, RoomScene, cached_rirs, compute_rirs, generate_placement,
                                  propagate, single_rir)
from blinky_aec.dataset import Waveform

FS = 16000


def first_arrival(h):
    """First sample reaching half the peak magnitude.

    Coincident reflections can sum above the direct path, so the global
    maximum is not a direct-path detector.
    """
    a = np.abs(h)
    return int(np.argmax(a >= 0.5 * a.max()))


def test_placement_deterministic_and_inside():
    scene = RoomScene()
    a, b = generate_placement(scene, 5, 50, seed=0), generate_placement(scene, 5, 50, seed=0)
    np.testing.assert_array_equal(a.blinky_positions, b.blinky_positions)
    np.testing.assert_array_equal(a.source_positions, b.source_positions)
    pts = np.vstack([a.blinky_positions, a.source_positions])
    assert pts.shape == (55, 3)
    assert np.all(pts > 0) and np.all(pts < np.array([8, 6, 4]))


def test_placement_margin_too_large():
    with pytest.raises(ValueError):
        generate_placement(RoomScene((0.5, 6, 4)), seed=0)


def test_scene_validation():
    with pytest.raises(ValueError):
        RoomScene(absorption=0.0)
    with pytest.raises(ValueError):
        RoomScene((8, -1, 4))
    with pytest.raises(ValueError):
        RoomScene(max_image_order=-1)


def test_direct_path_example():
    h, onset = single_rir(RoomScene(), (1, 1, 1), (4, 1, 1), FS)
    oracle = round(3 / 343 * FS)
    assert oracle == 140
    assert abs(first_arrival(h) - oracle) <= 2
    assert onset == oracle


def test_direct_path_delay_random_placements():
    scene = RoomScene()
    rng = np.random.default_rng(11)
    for _ in range(20):
        src, mic = rng.uniform(0.3, np.array([7.7, 5.7, 3.7]), size=(2, 3))
        h, _ = single_rir(scene, src, mic, FS)
        oracle = round(np.linalg.norm(src - mic) / 343 * FS)
        assert abs(first_arrival(h) - oracle) <= 2


def test_full_absorption_leaves_direct_path_only():
    src, mic = np.array([2.0, 3.0, 1.5]), np.array([5.0, 2.0, 2.5])
    h, onset = single_rir(RoomScene(absorption=1.0, max_image_order=7), src, mic, FS)
    d = np.linalg.norm(src - mic)
    # everything sits inside the fractional-delay kernel around the direct path
    assert np.all(h[onset + 41:] == 0)
    assert np.all(h[:max(onset - 41, 0)] == 0)
    np.testing.assert_allclose(h.sum(), 1 / (4 * np.pi * d), rtol=1e-2)


def test_reverberant_energy_decreases_with_absorption():
    src, mic = np.array([2.0, 3.0, 1.5]), np.array([5.0, 2.0, 2.5])
    tails = []
    for alpha in (0.4, 0.7, 1.0):
        h, onset = single_rir(RoomScene(absorption=alpha), src, mic, FS)
        tails.append(np.sum(h[onset + 41:] ** 2))
    assert tails[0] > 0
    assert tails[0] > tails[1] > tails[2]


def test_coincident_positions_rejected():
    with pytest.raises(ValueError):
        single_rir(RoomScene(), (1, 1, 1), (1, 1, 1.01), FS)


def test_compute_rirs_common_length():
    scene = RoomScene(max_image_order=3)
    pl = generate_placement(scene, 5, 50, seed=2)
    rirs = compute_rirs(scene, pl, FS)
    assert rirs.responses.shape[:2] == (50, 5)
    assert rirs.common_length == rirs.responses.shape[2]
    for k in range(50):
        for i in range(5):
            assert abs(rirs.responses[k, i, rirs.onsets[k, i]]) > 0


def test_rir_archive_roundtrip(tmp_path):
    scene = RoomScene(max_image_order=2)
    pl = generate_placement(scene, 2, 3, seed=5)
    a = cached_rirs(scene, pl, FS, tmp_path)
    files = list(tmp_path.glob("rirs_*.npz"))
    assert len(files) == 1 and scene.digest() in files[0].name
    b = cached_rirs(scene, pl, FS, tmp_path)
    np.testing.assert_array_equal(a.responses, b.responses)
    c = RIRSet.load(files[0])
    np.testing.assert_array_equal(c.onsets, a.onsets)


def test_propagate_identity_delay_linearity():
    rng = np.random.default_rng(0)
    s = Waveform(rng.standard_normal(2000), FS)
    delta = np.zeros(1)
    delta[0] = 1
    np.testing.assert_allclose(propagate(s, delta).samples, s.samples, atol=1e-12)
    d100 = np.zeros(101)
    d100[100] = 1
    out = propagate(s, d100).samples
    np.testing.assert_allclose(out[100:], s.samples[:-100], atol=1e-12)
    np.testing.assert_allclose(out[:100], 0, atol=1e-12)
    h = rng.standard_normal(50)
    np.testing.assert_allclose(propagate(Waveform(3.5 * s.samples, FS), h).samples,
                               3.5 * propagate(s, h).samples, atol=1e-10)
    s2 = Waveform(rng.standard_normal(2000), FS)
    np.testing.assert_allclose(propagate(Waveform(s.samples + s2.samples, FS), h).samples,
                               propagate(s, h).samples + propagate(s2, h).samples, atol=1e-10)


def test_propagate_time_invariance_and_window():
    s = Waveform(np.random.default_rng(3).standard_normal(1000), FS)
    h = np.random.default_rng(4).standard_normal(30)
    shifted = Waveform(np.concatenate([np.zeros(10), s.samples[:-10]]), FS)
    np.testing.assert_allclose(propagate(shifted, h).samples[10:],
                               propagate(s, h).samples[:-10], atol=1e-10)
    out = propagate(s, h, offset=20, length=1500).samples
    full = np.convolve(s.samples, h)
    np.testing.assert_allclose(out[:len(full) - 20], full[20:], atol=1e-10)
    assert np.all(out[len(full) - 20:] == 0)


def test_propagate_empty_rir():
    with pytest.raises(ValueError):
        propagate(Waveform(np.zeros(10), FS), np.zeros(0))
