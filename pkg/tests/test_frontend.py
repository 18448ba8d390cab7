import numpy as np
import pytest

from dualasr import frontend as fe


def _noise(n, seed=0, rate=16000):
    return fe.Waveform(np.random.default_rng(seed).standard_normal(n) * 0.1, rate)


def test_one_second_gives_98_frames():
    f = fe.compute_fbank(_noise(16000))
    assert f.frames.shape == (98, 40)
    assert f.frames.dtype == np.float32


def test_silence_is_floor_times_filter_area():
    f = fe.compute_fbank(fe.Waveform(np.zeros(4000), 16000))
    bank = fe.mel_filterbank(16000, 512)
    expected = np.log(fe.FLOOR_EPS * bank.sum(axis=1)).astype(np.float32)
    assert np.allclose(f.frames, expected[None, :], rtol=0, atol=1e-5)


def test_window_equal_to_hop():
    # 25 ms window and hop, two windows of audio
    f = fe.compute_fbank(_noise(800), win_ms=25, hop_ms=25)
    assert f.valid_len == 2


def test_short_audio_is_rejected():
    with pytest.raises(ValueError, match="shorter"):
        fe.compute_fbank(_noise(399))


def test_frame_count_formula_random_triples():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        win = int(rng.integers(400, 801))
        hop = int(rng.integers(1, 401))
        n = int(rng.integers(win, win + 4000))
        f = fe.compute_fbank(_noise(n, 1), win_ms=win / 16, hop_ms=hop / 16)
        assert f.valid_len == (n - win) // hop + 1


def test_fbank_deterministic_and_order_independent():
    a, b = _noise(5000, 1), _noise(7000, 2)
    fa = fe.compute_fbank(a).frames
    fb = fe.compute_fbank(b).frames
    assert np.array_equal(fe.compute_fbank(b).frames, fb)
    assert np.array_equal(fe.compute_fbank(a).frames, fa)


def test_tone_peaks_in_matching_mel_band():
    t = np.arange(16000) / 16000
    f = fe.compute_fbank(fe.Waveform(np.sin(2 * np.pi * 1000 * t), 16000)).frames
    centers = fe.mel_to_hz(np.linspace(0, fe.hz_to_mel(8000), 42))[1:-1]
    assert abs(centers[f.mean(axis=0).argmax()] - 1000) < 150


def test_speed_perturb_lengths():
    w = _noise(900)
    assert np.array_equal(fe.speed_perturb(w, 1.0).samples, w.samples)
    assert abs(len(fe.speed_perturb(w, 0.9).samples) - 1000) <= 1
    assert len(fe.speed_perturb(w, 1.1).samples) < 900
    assert fe.speed_perturb(w, 1.1).sample_rate == 16000
    with pytest.raises(ValueError):
        fe.speed_perturb(w, 0.0)


def test_speed_perturb_interpolates_linearly():
    w = fe.Waveform(np.arange(10.0), 16000)
    out = fe.speed_perturb(w, 0.5).samples
    assert np.allclose(out[:19], np.arange(19) * 0.5)


def _feats(t=100, seed=0):
    return np.random.default_rng(seed).standard_normal((t, 40)).astype(np.float32)


def test_spec_augment_zero_masks_is_identity():
    f = fe.FeatureSequence(_feats())
    pol = fe.SpecAugmentPolicy(0, 10, 0, 40)
    assert np.array_equal(fe.spec_augment(f, pol, np.random.default_rng(0)).frames, f.frames)


def test_full_band_frequency_mask_fills_everything():
    x = _feats()
    pol = fe.SpecAugmentPolicy(1, 40, 0, 0, fill_value=-3.0)
    for seed in range(200):
        out, rec = fe.mask_bands(x, pol, np.random.default_rng(seed))
        if rec.freq[0] == (0, 40):
            assert (out == -3.0).all()
            return
    pytest.fail("no full-width mask drawn in 200 seeds")


@pytest.mark.parametrize("seed", range(20))
def test_spec_augment_only_touches_recorded_bands(seed):
    x = _feats(t=int(np.random.default_rng(seed).integers(20, 150)), seed=seed)
    out, rec = fe.mask_bands(x, fe.SpecAugmentPolicy(), np.random.default_rng(seed))
    inside = np.zeros_like(x, dtype=bool)
    for a, b in rec.freq:
        inside[:, a:b] = True
    for a, b in rec.time:
        inside[a:b, :] = True
    assert np.array_equal(out[~inside], x[~inside])
    assert np.allclose(out[inside], x.mean())
    area = sum((b - a) * x.shape[0] for a, b in rec.freq) + sum((b - a) * 40 for a, b in rec.time)
    assert (out != x).sum() <= area
    for a, b in rec.freq:
        assert 0 <= b - a <= 10
    for a, b in rec.time:
        assert 0 <= b - a <= 40


def test_policy_validation():
    with pytest.raises(ValueError):
        fe.SpecAugmentPolicy(max_freq_width=41)
    with pytest.raises(ValueError):
        fe.SpecAugmentPolicy(num_time_masks=-1)


def test_feature_cache_round_trip(tmp_path):
    x = _feats(37)
    fe.write_feature_cache(tmp_path / "a.fbk", x)
    raw = (tmp_path / "a.fbk").read_bytes()
    assert raw[:4] == fe.CACHE_MAGIC and len(raw) == 12 + 37 * 40 * 4
    assert np.array_equal(fe.read_feature_cache(tmp_path / "a.fbk"), x)
    (tmp_path / "b.fbk").write_bytes(raw[:100])
    with pytest.raises(ValueError, match="truncated"):
        fe.read_feature_cache(tmp_path / "b.fbk")


def test_wav_round_trip_and_resampling(tmp_path):
    w = _noise(8000, rate=8000)
    fe.write_wav(tmp_path / "a.wav", w)
    back = fe.read_wav(tmp_path / "a.wav")
    assert back.sample_rate == 16000 and len(back.samples) == 16000
    same = fe.read_wav(tmp_path / "a.wav", target_rate=8000)
    assert np.abs(same.samples - w.samples).max() < 1 / 32767


def test_normalizer():
    feats = [_feats(50, 1) * 3 + 2, _feats(30, 2) * 3 + 2]
    norm = fe.Normalizer.fit(feats)
    z = np.concatenate([norm(f) for f in feats])
    assert np.allclose(z.mean(axis=0), 0, atol=1e-5)
    assert np.allclose(z.std(axis=0), 1, atol=1e-4)
    ident = fe.Normalizer.identity()
    assert np.array_equal(ident(feats[0]), feats[0])
