"""Waveform -> 40-dim log-mel features, plus training-time augmentation."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

TARGET_RATE = 16000
N_MELS = 40
FLOOR_EPS = 1e-10
CACHE_MAGIC = b"FBK1"


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.ndim != 1 or len(self.samples) < 1:
            raise ValueError("waveform must be a non-empty mono sample array")


@dataclass
class FeatureSequence:
    frames: np.ndarray  # [T, n_mels] float32
    utt_id: str = ""
    language: str | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[1] != N_MELS:
            raise ValueError(f"features must be [T, {N_MELS}], got {self.frames.shape}")
        if not np.isfinite(self.frames).all():
            raise ValueError(f"non-finite features in utterance {self.utt_id!r}")

    @property
    def valid_len(self) -> int:
        return self.frames.shape[0]


@dataclass
class SpecAugmentPolicy:
    num_freq_masks: int = 2
    max_freq_width: int = 10
    num_time_masks: int = 2
    max_time_width: int = 40
    # None: fill with the utterance mean
    fill_value: float | None = None

    def __post_init__(self):
        if not 0 <= self.max_freq_width <= N_MELS:
            raise ValueError(f"max_freq_width must lie in [0, {N_MELS}]")
        if min(self.num_freq_masks, self.num_time_masks, self.max_time_width) < 0:
            raise ValueError("mask counts and widths must be non-negative")


@dataclass
class MaskRecord:
    """Bands actually masked by one spec_augment call, as half-open ranges."""

    freq: list[tuple[int, int]] = field(default_factory=list)
    time: list[tuple[int, int]] = field(default_factory=list)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int = N_MELS) -> np.ndarray:
    """Triangular filters spanning 0 Hz to Nyquist, ``[n_mels, n_fft//2 + 1]``."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    freqs = np.linspace(0.0, sample_rate / 2.0, n_fft // 2 + 1)
    bank = np.zeros((n_mels, len(freqs)))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rise = (freqs - lo) / (mid - lo)
        fall = (hi - freqs) / (hi - mid)
        bank[m] = np.clip(np.minimum(rise, fall), 0.0, None)
    if (bank.sum(axis=1) <= 0).any():
        raise ValueError(f"empty mel filter: n_fft={n_fft} too small for {n_mels} bins")
    bank.setflags(write=False)
    return bank


def num_frames(n_samples: int, win: int, hop: int) -> int:
    if n_samples < win:
        raise ValueError(f"audio of {n_samples} samples is shorter than one {win}-sample window")
    return (n_samples - win) // hop + 1


def compute_fbank(
    w: Waveform,
    win_ms: float = 25.0,
    hop_ms: float = 10.0,
    n_mels: int = N_MELS,
    utt_id: str = "",
    language: str | None = None,
) -> FeatureSequence:
    """Log mel-filterbank energies as a ``[T, n_mels]`` float32 sequence.

    Frames are Hann-windowed, zero-padded to the next power of two and turned
    into power spectra; ``FLOOR_EPS`` is added to every power bin before the
    mel projection so silence maps to ``log(FLOOR_EPS * filter_area)``.
    """
    win = int(round(w.sample_rate * win_ms / 1000.0))
    hop = int(round(w.sample_rate * hop_ms / 1000.0))
    t = num_frames(len(w.samples), win, hop)
    n_fft = 1 << (win - 1).bit_length()
    idx = np.arange(win)[None, :] + hop * np.arange(t)[:, None]
    frames = w.samples[idx] * np.hanning(win)[None, :]
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    bank = mel_filterbank(w.sample_rate, n_fft, n_mels)
    feats = np.log((power + FLOOR_EPS) @ bank.T).astype(np.float32)
    return FeatureSequence(feats, utt_id, language)


def speed_perturb(w: Waveform, factor: float) -> Waveform:
    """Resample by linear interpolation so duration becomes ``len/factor``."""
    if factor <= 0:
        raise ValueError(f"speed factor must be positive, got {factor}")
    if factor == 1.0:
        return Waveform(w.samples.copy(), w.sample_rate)
    n = len(w.samples)
    n_out = max(1, int(round(n / factor)))
    pos = np.arange(n_out) * factor
    out = np.interp(pos, np.arange(n), w.samples)
    return Waveform(out, w.sample_rate)


def spec_augment(
    f: FeatureSequence, policy: SpecAugmentPolicy, rng: np.random.Generator
) -> FeatureSequence:
    frames, _ = mask_bands(f.frames, policy, rng)
    return FeatureSequence(frames, f.utt_id, f.language)


def mask_bands(
    feats: np.ndarray, policy: SpecAugmentPolicy, rng: np.random.Generator
) -> tuple[np.ndarray, MaskRecord]:
    """Apply frequency and time masks; returns the new matrix and the bands used."""
    out = np.array(feats, dtype=np.float32, copy=True)
    t, nf = out.shape
    fill = float(feats.mean()) if policy.fill_value is None else policy.fill_value
    rec = MaskRecord()
    for _ in range(policy.num_freq_masks):
        width = int(rng.integers(0, policy.max_freq_width + 1))
        start = int(rng.integers(0, nf - width + 1))
        out[:, start:start + width] = fill
        rec.freq.append((start, start + width))
    for _ in range(policy.num_time_masks):
        width = int(rng.integers(0, min(policy.max_time_width, t) + 1))
        start = int(rng.integers(0, t - width + 1))
        out[start:start + width, :] = fill
        rec.time.append((start, start + width))
    return out, rec


# ---------------------------------------------------------------------------
# I/O


def read_wav(path: str | Path, target_rate: int = TARGET_RATE) -> Waveform:
    """Read mono 16-bit PCM or float32 WAV, resampled to ``target_rate``."""
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    if rate != target_rate:
        g = np.gcd(rate, target_rate)
        samples = resample_poly(samples, target_rate // g, rate // g)
        rate = target_rate
    return Waveform(samples, rate)


def write_wav(path: str | Path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(str(path), w.sample_rate, pcm)


def write_feature_cache(path: str | Path, feats: np.ndarray) -> None:
    """Header: 4-byte magic, uint32 T, uint32 n_mels (little endian); then float32 rows."""
    feats = np.ascontiguousarray(feats, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC + struct.pack("<II", *feats.shape))
        fh.write(feats.tobytes())


def read_feature_cache(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) != 12 or head[:4] != CACHE_MAGIC:
            raise ValueError(f"{path}: not a feature cache file")
        t, d = struct.unpack("<II", head[4:])
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != t * d:
        raise ValueError(f"{path}: truncated cache ({data.size} of {t * d} values)")
    return data.reshape(t, d).astype(np.float32)


# ---------------------------------------------------------------------------
# global mean/variance normalisation


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, feats: list[np.ndarray]) -> "Normalizer":
        stacked = np.concatenate(feats, axis=0).astype(np.float64)
        return cls(
            stacked.mean(axis=0).astype(np.float32),
            np.maximum(stacked.std(axis=0), 1e-5).astype(np.float32),
        )

    @classmethod
    def identity(cls, dim: int = N_MELS) -> "Normalizer":
        return cls(np.zeros(dim, np.float32), np.ones(dim, np.float32))

    def __call__(self, feats: np.ndarray) -> np.ndarray:
        return ((feats - self.mean) / self.std).astype(np.float32)
