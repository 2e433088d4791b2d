"""Front-end DSP against the direct-summation DFT oracle, filterbank
geometry, normalization algebra, Griffin-Lim behavior, and the JIT/numpy
kernel parity."""

import math

import numpy as np
import pytest

from meldiff import accel, audiodsp
from meldiff.audiodsp import (AudioSignal, NormalizationStats,
                              build_mel_filterbank, denormalize, frame_count,
                              griffin_lim, hann_window, istft, load_wav,
                              log_mel, mel_from_hz, mel_spectrogram,
                              naive_dft_oracle, normalize, peak_normalize,
                              save_wav, stft_magnitude)


def speechlike_signal(seconds=1.0, seed=0):
    sr = audiodsp.SAMPLE_RATE
    t = np.arange(int(seconds * sr)) / sr
    f0 = 140.0 * (1 + 0.02 * np.sin(2 * np.pi * 3 * t))
    phase = 2 * np.pi * np.cumsum(f0) / sr
    x = sum((1.0 / h) * np.sin(h * phase) for h in range(1, 8))
    x *= 0.5 + 0.5 * np.sin(2 * np.pi * 1.3 * t) ** 2
    x += 0.001 * np.random.default_rng(seed).standard_normal(len(t))
    return peak_normalize(AudioSignal(x))


# ------------------------------------------------------------------- frames


def test_frame_count_boundaries():
    win, hop = 640, 160
    assert frame_count(640, win, hop) == 1
    assert frame_count(640 + 159, win, hop) == 1
    assert frame_count(640 + 160, win, hop) == 2
    assert frame_count(16000, win, hop) == 97
    with pytest.raises(ValueError):
        frame_count(639, win, hop)


def test_peak_normalization():
    sig = peak_normalize(AudioSignal(np.array([0.1, -0.4, 0.2])))
    assert np.max(np.abs(sig.samples)) == pytest.approx(0.9, rel=1e-15)
    silent = peak_normalize(AudioSignal(np.zeros(8)))
    assert np.all(silent.samples == 0.0)


# --------------------------------------------------------------- DFT oracle


def test_oracle_unit_impulse_flat():
    spec = naive_dft_oracle(np.array([1.0]), 640)
    np.testing.assert_allclose(np.abs(spec), 1.0, rtol=1e-12)


def test_oracle_zeros():
    assert np.all(naive_dft_oracle(np.zeros(640), 640) == 0.0)


def test_oracle_linearity(rng):
    x = rng.standard_normal(640)
    y = rng.standard_normal(640)
    lhs = naive_dft_oracle(2.5 * x - 1.25 * y, 640)
    rhs = 2.5 * naive_dft_oracle(x, 640) - 1.25 * naive_dft_oracle(y, 640)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * np.abs(rhs).max())


def test_oracle_rejects_long_frame():
    with pytest.raises(ValueError):
        naive_dft_oracle(np.zeros(641), 640)


def test_stft_matches_oracle_on_random_signal(rng):
    x = rng.uniform(-1, 1, audiodsp.SAMPLE_RATE)
    mag = stft_magnitude(x)
    window = hann_window(640)
    worst = 0.0
    for m in range(mag.shape[1]):
        frame = x[m * 160:m * 160 + 640] * window
        oracle = np.abs(naive_dft_oracle(frame, 640))[:321]
        worst = max(worst, float(np.max(np.abs(mag[:, m] - oracle))))
    assert worst < 1e-6


def test_stft_pure_tone_bin():
    sr = audiodsp.SAMPLE_RATE
    tone = np.sin(2 * np.pi * 1000.0 * np.arange(sr) / sr)
    mag = stft_magnitude(tone)
    assert mag.shape == (321, 97)
    assert np.all(mag.argmax(axis=0) == 40)     # 1000 / 16000 * 640


def test_stft_dc_signal():
    mag = stft_magnitude(np.ones(1600))
    assert np.all(mag.argmax(axis=0) == 0)


def test_stft_too_short():
    with pytest.raises(ValueError):
        stft_magnitude(np.zeros(100))


# --------------------------------------------------------------- filterbank


def test_filterbank_dimensions():
    fb = build_mel_filterbank()
    assert fb.weights.shape == (80, 321)
    assert fb.n_mels == 80
    assert np.all(fb.weights >= 0.0)


def test_filterbank_centers_match_scalar_oracle():
    # math-module scalar recomputation of the equally-spaced mel centers
    fb = build_mel_filterbank()
    lo = 2595.0 * math.log10(1.0 + 20.0 / 700.0)
    hi = 2595.0 * math.log10(1.0 + 8000.0 / 700.0)
    for k in range(80):
        mel = lo + (hi - lo) * (k + 1) / 81.0
        hz = 700.0 * (10.0 ** (mel / 2595.0) - 1.0)
        assert abs(fb.centers_hz[k] - hz) / hz < 1e-9


def test_filterbank_coverage():
    fb = build_mel_filterbank()
    bin_hz = np.arange(321) * (16000 / 640)
    inside = (bin_hz > 20.0) & (bin_hz < 8000.0)   # open interval: the
    # exact edge bins sit where the first/last triangles reach zero
    assert np.all(fb.weights[:, inside].sum(axis=0) > 0.0)
    outside = bin_hz < 20.0
    assert np.all(fb.weights[:, outside] == 0.0)


def test_filterbank_rows_unimodal():
    fb = build_mel_filterbank()
    for row in fb.weights:
        support = np.flatnonzero(row)
        assert support.size > 0
        assert np.array_equal(support, np.arange(support[0], support[-1] + 1))
        peak = row[support].argmax()
        assert np.all(np.diff(row[support][:peak + 1]) >= 0)
        assert np.all(np.diff(row[support][peak:]) <= 0)


def test_filterbank_rejects_fmax_above_nyquist():
    with pytest.raises(ValueError):
        build_mel_filterbank(fmax=8001.0)


def test_mel_scale_variants():
    assert mel_from_hz(1000.0, "htk") == pytest.approx(999.9855, abs=1e-3)
    assert mel_from_hz(500.0, "slaney") == pytest.approx(7.5, rel=1e-12)
    fb = build_mel_filterbank(scale="slaney")
    assert fb.weights.shape == (80, 321)
    with pytest.raises(ValueError):
        mel_from_hz(100.0, "bark")


# ------------------------------------------------------------ normalization


def test_normalization_endpoints():
    stats = NormalizationStats(-11.0, 2.0)
    assert normalize(np.array(-11.0), stats) == pytest.approx(-1.0)
    assert normalize(np.array(2.0), stats) == pytest.approx(1.0)


def test_normalization_round_trip(rng):
    stats = NormalizationStats(math.log(1e-5), 1.7)
    vals = rng.uniform(-12.0, 3.0, (80, 30))
    back = denormalize(normalize(vals, stats), stats)
    assert np.max(np.abs(back - vals) / np.abs(vals)) < 1e-12


def test_normalization_monotone(rng):
    stats = NormalizationStats(-5.0, 5.0)
    vals = np.sort(rng.uniform(-8, 8, 64))
    out = normalize(vals, stats)
    assert np.all(np.diff(out) > 0)


def test_degenerate_stats_rejected():
    with pytest.raises(ValueError):
        NormalizationStats(1.0, 1.0)


def test_silence_hits_clip_floor():
    fb = build_mel_filterbank()
    lm = log_mel(np.zeros(1600), fb)
    assert np.all(lm == math.log(1e-5))      # about -11.5129
    assert lm[0, 0] == pytest.approx(-11.512925464970229, rel=1e-12)


def test_mel_spectrogram_range_and_shape():
    sig = speechlike_signal()
    fb = build_mel_filterbank()
    lm = log_mel(sig, fb)
    stats = NormalizationStats(float(lm.min()), float(lm.max()))
    mel = mel_spectrogram(sig, fb, stats)
    assert mel.shape == (80, 97)
    assert mel.min() == pytest.approx(-1.0) and mel.max() == pytest.approx(1.0)


# --------------------------------------------------------------- griffinlim


def test_istft_reconstructs_interior(rng):
    x = rng.standard_normal(16000)
    window = hann_window(640)
    frames = np.lib.stride_tricks.sliding_window_view(x, 640)[::160] * window
    spec = np.fft.rfft(frames, n=640, axis=1).T
    rec = istft(spec)
    # interior samples (edges lack full overlap) must reconstruct exactly
    n = len(rec)
    np.testing.assert_allclose(rec[640:n - 640], x[640:n - 640], atol=1e-10)


def test_griffin_lim_error_decreases_monotonically():
    sig = speechlike_signal()
    fb = build_mel_filterbank()
    lm = log_mel(sig, fb)
    stats = NormalizationStats(float(lm.min()), float(lm.max()))
    mel = normalize(lm, stats)
    _, traj = griffin_lim(mel, fb, stats, iterations=12, seed=0,
                          return_trajectory=True)
    for i in range(10):
        assert traj[i + 1] < traj[i], (i, traj)


def test_griffin_lim_zero_mel_near_silent():
    fb = build_mel_filterbank()
    stats = NormalizationStats(math.log(1e-5), 0.0)
    out = griffin_lim(-np.ones((80, 40)), fb, stats, iterations=8, seed=1)
    rms = float(np.sqrt(np.mean(out.samples ** 2)))
    assert rms < 1e-3


def test_griffin_lim_deterministic_per_seed():
    fb = build_mel_filterbank()
    stats = NormalizationStats(math.log(1e-5), 1.0)
    mel = np.random.default_rng(3).uniform(-1, 0, (80, 24))
    a = griffin_lim(mel, fb, stats, iterations=5, seed=7)
    b = griffin_lim(mel, fb, stats, iterations=5, seed=7)
    c = griffin_lim(mel, fb, stats, iterations=5, seed=8)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


# ----------------------------------------------------------------- wav i/o


def test_wav_round_trip(tmp_path):
    sig = speechlike_signal(0.2)
    path = tmp_path / "t.wav"
    save_wav(sig, path)
    back = load_wav(path)
    assert back.sample_rate == 16000
    # 16-bit quantization: half an LSB plus the 32767/32768 scale skew
    np.testing.assert_allclose(back.samples, sig.samples, atol=5e-5)


# ------------------------------------------------------------- accel kernels


def test_accel_paths_bitwise_identical(rng):
    frames = rng.standard_normal((37, 640))
    length = 36 * 160 + 640
    jit = accel.overlap_add(frames, 160, length)
    ref = accel._overlap_add_numpy(frames, 160, length)
    np.testing.assert_array_equal(jit, ref)
    w = hann_window(640)
    jit = accel.window_sumsquare(w, 37, 160, length)
    ref = accel._window_sumsquare_numpy(w, 37, 160, length)
    np.testing.assert_array_equal(jit, ref)


def test_accel_overlap_add_against_direct_sum(rng):
    frames = rng.standard_normal((5, 8))
    out = accel.overlap_add(frames, 3, 4 * 3 + 8)
    expect = np.zeros(20)
    for m in range(5):
        expect[3 * m:3 * m + 8] += frames[m]
    np.testing.assert_array_equal(out, expect)
