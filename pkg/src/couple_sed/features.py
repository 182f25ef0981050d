"""Audio frontend: raw samples to standardized log-mel features.

Defaults follow the 16 kHz / 2048-sample window / 255-sample hop / 128
mel-band configuration; desk-scale runs shrink everything through the
same ``FeatureConfig``.
"""

import wave
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FeatureConfig:
    """STFT and mel filterbank parameters.

    ``window`` is both the frame length and the DFT size.
    """

    sample_rate: int = 16000
    window: int = 2048
    hop: int = 255
    n_mels: int = 128
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.hop < 1:
            raise ValueError(f"hop must be >= 1, got {self.hop}")
        if self.n_mels < 1:
            raise ValueError(f"n_mels must be >= 1, got {self.n_mels}")
        if self.window < self.hop:
            raise ValueError(f"window ({self.window}) must be >= hop ({self.hop})")

    @classmethod
    def desk(cls):
        """Small configuration for 2 s synthetic clips at 8 kHz."""
        return cls(sample_rate=8000, window=512, hop=256, n_mels=32)

    @property
    def n_bins(self):
        return self.window // 2 + 1

    @property
    def frame_duration(self):
        return self.hop / self.sample_rate

    def n_frames(self, n_samples):
        if n_samples < self.window:
            raise ValueError(
                f"clip of {n_samples} samples is shorter than one window ({self.window})")
        return (n_samples - self.window) // self.hop + 1


@dataclass(frozen=True)
class FeatureMatrix:
    """T x n_mels feature frames plus the seconds each frame advances."""

    frames: np.ndarray
    frame_duration: float

    @property
    def n_frames(self):
        return self.frames.shape[0]


def stft_mag(samples, cfg):
    """Hann-windowed DFT magnitudes, one row per frame.

    Frame t covers samples [t*hop, t*hop + window); the final partial
    frame is truncated, so the row count is floor((n-window)/hop) + 1.
    """
    samples = np.asarray(samples, dtype=np.float64)
    n = cfg.n_frames(samples.size)
    frames = np.lib.stride_tricks.sliding_window_view(samples, cfg.window)[::cfg.hop][:n]
    windowed = frames * np.hanning(cfg.window)
    return np.abs(np.fft.rfft(windowed, axis=1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg):
    """Triangular filters uniformly spaced on the mel scale.

    Returns an n_mels x (window/2 + 1) nonnegative matrix; filter edges
    run from 0 Hz to the Nyquist frequency.
    """
    if cfg.n_mels >= cfg.window // 2:
        raise ValueError(
            f"n_mels ({cfg.n_mels}) too large for FFT resolution ({cfg.window // 2} usable bins)")
    edges_hz = mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2.0), cfg.n_mels + 2))
    bin_hz = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.window
    fb = np.zeros((cfg.n_mels, cfg.n_bins))
    for i in range(cfg.n_mels):
        lo, center, hi = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def log_mel(samples, cfg, standardize=True):
    """Log power-mel features with optional per-band standardization.

    Each band is shifted to zero mean over the clip and, where its
    standard deviation is positive, scaled to unit variance.
    """
    mag = stft_mag(samples, cfg)
    mel = (mag * mag) @ mel_filterbank(cfg).T
    logm = np.log(mel + cfg.log_floor)
    if standardize:
        mean = logm.mean(axis=0)
        std = logm.std(axis=0)
        centered = logm - mean
        logm = np.where(std > 0.0, centered / np.where(std > 0.0, std, 1.0), centered)
    return FeatureMatrix(frames=logm, frame_duration=cfg.frame_duration)


def read_wav(path):
    """Read a 16-bit PCM mono WAV into float samples in [-1, 1).

    Returns:
        (samples, sample_rate)
    """
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio, got {f.getnchannels()} channels")
        if f.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * f.getsampwidth()}-bit")
        raw = f.readframes(f.getnframes())
        rate = f.getframerate()
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0, rate


def write_wav(path, samples, sample_rate):
    """Write float samples (clipped to [-1, 1)) as 16-bit PCM mono WAV."""
    pcm = np.clip(np.asarray(samples) * 32768.0, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(int(sample_rate))
        f.writeframes(pcm.tobytes())
