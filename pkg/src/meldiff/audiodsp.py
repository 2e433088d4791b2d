"""Mel-spectrogram front-end and Griffin-Lim inverse.

Pipeline for 16 kHz speech: peak-normalize to 0.9, magnitude STFT with
a 640-sample window and DFT, hop 160 (frames fully inside the signal,
no padding), 80 triangular mel filters between 20 Hz and 8 kHz, clip at
1e-5, natural log, then an affine map to roughly [-1, 1] driven by the
corpus-wide min/max of the log-mel values.

The STFT is verified against ``naive_dft_oracle``, a direct-summation
transform that shares no code with the FFT path.  Griffin-Lim inverts
the pipeline for audition: pseudo-inverse of the filterbank back to
linear magnitudes, then iterative phase reconstruction.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from . import accel

SAMPLE_RATE = 16000
WIN_LENGTH = 640
HOP_LENGTH = 160
DFT_LENGTH = 640
N_MELS = 80
FMIN = 20.0
FMAX = 8000.0
CLIP_FLOOR = 1e-5
PEAK_LEVEL = 0.9


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        object.__setattr__(self, "samples",
                           np.asarray(self.samples, dtype=np.float64))
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio samples must be finite")


def peak_normalize(sig: AudioSignal, level: float = PEAK_LEVEL) -> AudioSignal:
    peak = np.max(np.abs(sig.samples)) if sig.samples.size else 0.0
    if peak == 0.0:
        return sig
    return AudioSignal(sig.samples * (level / peak), sig.sample_rate)


@dataclass(frozen=True)
class NormalizationStats:
    """Corpus-wide log-mel range used by the affine [-1, 1] mapping."""

    global_min: float
    global_max: float

    def __post_init__(self):
        if not self.global_min < self.global_max:
            raise ValueError(
                f"degenerate stats: min {self.global_min} >= max {self.global_max}")


def hann_window(win: int) -> np.ndarray:
    # periodic variant (denominator win, not win - 1)
    n = np.arange(win, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / win)


def frame_count(n_samples: int, win: int = WIN_LENGTH,
                hop: int = HOP_LENGTH) -> int:
    if n_samples < win:
        raise ValueError(f"signal length {n_samples} shorter than window {win}")
    return (n_samples - win) // hop + 1


def _frames(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    n = frame_count(len(x), win, hop)
    idx = hop * np.arange(n)[:, None] + np.arange(win)[None, :]
    return x[idx]


def stft_magnitude(x, win: int = WIN_LENGTH, hop: int = HOP_LENGTH,
                   dft_len: int = DFT_LENGTH, window: np.ndarray | None = None
                   ) -> np.ndarray:
    """Magnitude spectrogram, shape (dft_len // 2 + 1, n_frames)."""
    samples = x.samples if isinstance(x, AudioSignal) else np.asarray(x, dtype=np.float64)
    if window is None:
        window = hann_window(win)
    frames = _frames(samples, win, hop) * window
    spec = np.fft.rfft(frames, n=dft_len, axis=1)
    return np.abs(spec).T


def naive_dft_oracle(frame: np.ndarray, dft_len: int = DFT_LENGTH) -> np.ndarray:
    """Direct-summation DFT, double precision; the independent check for
    the FFT path.  X[k] = sum_n frame[n] exp(-2 pi i k n / dft_len)."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1 or len(frame) > dft_len:
        raise ValueError(f"frame length {frame.shape} exceeds DFT length {dft_len}")
    n = np.arange(len(frame))
    k = np.arange(dft_len)[:, None]
    return np.exp(-2j * np.pi * k * n / dft_len) @ frame.astype(complex)


def mel_from_hz(f, scale: str = "htk"):
    if scale == "htk":
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)
    if scale == "slaney":
        f = np.asarray(f, dtype=np.float64)
        # linear below 1 kHz, logarithmic above
        mel = f / (200.0 / 3.0)
        log_region = f >= 1000.0
        return np.where(log_region,
                        15.0 + np.log(np.maximum(f, 1000.0) / 1000.0) / (np.log(6.4) / 27.0),
                        mel)
    raise ValueError(f"unknown mel scale {scale!r}")


def hz_from_mel(m, scale: str = "htk"):
    if scale == "htk":
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)
    if scale == "slaney":
        m = np.asarray(m, dtype=np.float64)
        log_region = m >= 15.0
        return np.where(log_region,
                        1000.0 * np.exp((np.maximum(m, 15.0) - 15.0) * (np.log(6.4) / 27.0)),
                        m * (200.0 / 3.0))
    raise ValueError(f"unknown mel scale {scale!r}")


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray      # (n_mels, dft_len // 2 + 1)
    centers_hz: np.ndarray   # (n_mels,)
    fmin: float
    fmax: float
    sample_rate: int
    scale: str

    def __post_init__(self):
        self.weights.setflags(write=False)
        self.centers_hz.setflags(write=False)

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]


def build_mel_filterbank(n_mels: int = N_MELS, dft_len: int = DFT_LENGTH,
                         sample_rate: int = SAMPLE_RATE, fmin: float = FMIN,
                         fmax: float = FMAX, scale: str = "htk") -> MelFilterbank:
    """Triangular filters with centers equally spaced on the mel axis."""
    nyquist = sample_rate / 2.0
    if fmax > nyquist:
        raise ValueError(f"fmax {fmax} exceeds Nyquist {nyquist}")
    if not 0.0 <= fmin < fmax:
        raise ValueError(f"need 0 <= fmin < fmax, got {fmin}, {fmax}")
    edges_mel = np.linspace(float(mel_from_hz(fmin, scale)),
                            float(mel_from_hz(fmax, scale)), n_mels + 2)
    edges_hz = hz_from_mel(edges_mel, scale)
    bin_hz = np.arange(dft_len // 2 + 1) * (sample_rate / dft_len)
    lo, mid, hi = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    rising = (bin_hz - lo) / (mid - lo)
    falling = (hi - bin_hz) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    return MelFilterbank(weights=weights, centers_hz=edges_hz[1:-1].copy(),
                         fmin=fmin, fmax=fmax, sample_rate=sample_rate,
                         scale=scale)


def log_mel(x, fb: MelFilterbank, win: int = WIN_LENGTH,
            hop: int = HOP_LENGTH, dft_len: int = DFT_LENGTH,
            clip_floor: float = CLIP_FLOOR) -> np.ndarray:
    """Unnormalized log-mel: log(max(fb @ |STFT|, clip_floor))."""
    mag = stft_magnitude(x, win, hop, dft_len)
    return np.log(np.maximum(fb.weights @ mag, clip_floor))


def normalize(logmel: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    span = stats.global_max - stats.global_min
    return 2.0 * (logmel - stats.global_min) / span - 1.0


def denormalize(m: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Exact affine inverse of ``normalize``."""
    span = stats.global_max - stats.global_min
    return (np.asarray(m) + 1.0) * (span / 2.0) + stats.global_min


def mel_spectrogram(x, fb: MelFilterbank, stats: NormalizationStats,
                    win: int = WIN_LENGTH, hop: int = HOP_LENGTH,
                    dft_len: int = DFT_LENGTH,
                    clip_floor: float = CLIP_FLOOR) -> np.ndarray:
    """Full front-end; output is near [-1, 1] but may exceed it for
    signals outside the stats corpus."""
    return normalize(log_mel(x, fb, win, hop, dft_len, clip_floor), stats)


def istft(spec: np.ndarray, win: int = WIN_LENGTH, hop: int = HOP_LENGTH,
          window: np.ndarray | None = None) -> np.ndarray:
    """Weighted overlap-add inverse of the no-padding STFT."""
    if window is None:
        window = hann_window(win)
    frames = np.fft.irfft(spec.T, n=max(win, (spec.shape[0] - 1) * 2), axis=1)[:, :win]
    n_frames = frames.shape[0]
    length = (n_frames - 1) * hop + win
    num = accel.overlap_add(np.ascontiguousarray(frames * window), hop, length)
    den = accel.window_sumsquare(window, n_frames, hop, length)
    return num / np.maximum(den, 1e-12)


def mel_to_linear(m: np.ndarray, fb: MelFilterbank,
                  stats: NormalizationStats) -> np.ndarray:
    """Normalized mel back to linear-frequency magnitudes via the
    filterbank pseudo-inverse (clipped at zero)."""
    mel_mag = np.exp(denormalize(m, stats))
    return np.maximum(np.linalg.pinv(fb.weights) @ mel_mag, 0.0)


def griffin_lim(m: np.ndarray, fb: MelFilterbank, stats: NormalizationStats,
                iterations: int = 60, seed: int = 0, win: int = WIN_LENGTH,
                hop: int = HOP_LENGTH, dft_len: int = DFT_LENGTH,
                return_trajectory: bool = False):
    """Iterative phase reconstruction from a normalized mel tensor.

    Deterministic per seed (the seed draws the initial phases).  With
    ``return_trajectory`` the per-iteration mel-domain relative error is
    returned alongside the signal.
    """
    target_mag = mel_to_linear(m, fb, stats)
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(target_mag.shape))
    target_norm = float(np.linalg.norm(fb.weights @ target_mag))
    trajectory = []
    x = istft(target_mag * phase, win, hop)
    for _ in range(iterations):
        spec = _stft_complex(x, win, hop, dft_len)
        if return_trajectory:
            err = np.linalg.norm(fb.weights @ np.abs(spec)[:, :target_mag.shape[1]]
                                 - fb.weights @ target_mag)
            trajectory.append(float(err) / max(target_norm, 1e-300))
        mag = np.abs(spec)
        phase = spec / np.maximum(mag, 1e-16)
        x = istft(target_mag * phase[:, :target_mag.shape[1]], win, hop)
    sig = AudioSignal(x, fb.sample_rate)
    return (sig, trajectory) if return_trajectory else sig


def _stft_complex(x: np.ndarray, win: int, hop: int,
                           dft_len: int) -> np.ndarray:
    window = hann_window(win)
    frames = _frames(np.asarray(x, dtype=np.float64), win, hop) * window
    return np.fft.rfft(frames, n=dft_len, axis=1).T


# --------------------------------------------------------------------------
# 16-bit PCM RIFF I/O (mono)


def load_wav(path) -> AudioSignal:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise ValueError("expected 16-bit mono PCM")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioSignal(samples, rate)


def save_wav(sig: AudioSignal, path) -> None:
    clipped = np.clip(sig.samples, -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sig.sample_rate)
        fh.writeframes(pcm.tobytes())
