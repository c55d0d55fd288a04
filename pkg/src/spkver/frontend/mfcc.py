from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.fft import dct

from ..corpus import AudioBuffer

ENERGY_FLOOR = 1e-10


@dataclass(frozen=True)
class MfccConfig:
    sample_rate: int = 16000
    num_ceps: int = 40
    num_mel_bins: int = 40
    frame_length_ms: float = 25.0
    frame_shift_ms: float = 10.0
    low_freq: float = 20.0
    high_freq: float | None = None  # None -> nyquist - 100 Hz
    fft_size: int | None = None  # None -> next power of two >= frame length
    preemphasis: float = 0.97
    dither: float = 0.0
    dither_seed: int = 0

    def __post_init__(self):
        if self.num_ceps > self.num_mel_bins:
            raise ValueError("num_ceps must not exceed num_mel_bins")
        if self.fft_size is not None and self.fft_size < self.frame_length:
            raise ValueError("fft_size must be >= frame length in samples")
        if not 0 <= self.low_freq < self.upper_freq <= self.sample_rate / 2:
            raise ValueError("need 0 <= low_freq < high_freq <= nyquist")

    @classmethod
    def for_rate(cls, sample_rate: int, **overrides) -> "MfccConfig":
        """23 ceps / 30 mel bins at 8 kHz, 40 / 40 at 16 kHz."""
        base = {8000: dict(num_ceps=23, num_mel_bins=30), 16000: dict(num_ceps=40, num_mel_bins=40)}
        if sample_rate not in base:
            raise ValueError(f"no default MFCC layout for {sample_rate} Hz")
        return cls(sample_rate=sample_rate, **{**base[sample_rate], **overrides})

    @property
    def frame_length(self) -> int:
        return int(round(self.sample_rate * self.frame_length_ms / 1000))

    @property
    def frame_shift(self) -> int:
        return int(round(self.sample_rate * self.frame_shift_ms / 1000))

    @property
    def n_fft(self) -> int:
        if self.fft_size is not None:
            return self.fft_size
        return 1 << (self.frame_length - 1).bit_length()

    @property
    def upper_freq(self) -> float:
        return self.sample_rate / 2 - 100.0 if self.high_freq is None else self.high_freq

    def with_(self, **changes) -> "MfccConfig":
        return replace(self, **changes)


@dataclass
class FeatureMatrix:
    data: np.ndarray
    frame_shift_ms: float = 10.0
    source_utt_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError("feature data must be frames x dims")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature matrix contains non-finite values")
        self.data = data

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(data, self.frame_shift_ms, self.source_utt_id, dict(self.meta))


def num_frames(num_samples: int, frame_length: int, frame_shift: int) -> int:
    if num_samples < frame_length:
        return 0
    return (num_samples - frame_length) // frame_shift + 1


def frame_signal(x: np.ndarray, frame_length: int, frame_shift: int) -> np.ndarray:
    n = num_frames(len(x), frame_length, frame_shift)
    idx = np.arange(frame_length)[None, :] + frame_shift * np.arange(n)[:, None]
    return x[idx]


def hz_to_mel(f):
    return 1127.0 * np.log1p(np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * np.expm1(np.asarray(m, dtype=np.float64) / 1127.0)


def mel_filterbank(cfg: MfccConfig) -> tuple[np.ndarray, np.ndarray]:
    """Triangular filters equally spaced on the mel scale.

    Returns the (num_mel_bins, n_fft//2 + 1) weight matrix and the bin
    centre frequencies in Hz.
    """
    n_bins = cfg.num_mel_bins
    mel_lo, mel_hi = hz_to_mel(cfg.low_freq), hz_to_mel(cfg.upper_freq)
    edges = np.linspace(mel_lo, mel_hi, n_bins + 2)
    fft_mel = hz_to_mel(np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft)
    left, centre, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (fft_mel[None, :] - left) / (centre - left)
    down = (right - fft_mel[None, :]) / (right - centre)
    weights = np.clip(np.minimum(up, down), 0.0, None)
    return weights, mel_to_hz(edges[1:-1])


def _frames_for(buf: AudioBuffer, cfg: MfccConfig) -> np.ndarray:
    if buf.sample_rate != cfg.sample_rate:
        raise ValueError(f"sample rate {buf.sample_rate} does not match config {cfg.sample_rate}")
    if len(buf) < cfg.frame_length:
        raise ValueError(f"audio has {len(buf)} samples, shorter than one {cfg.frame_length}-sample frame")
    x = buf.samples
    if cfg.dither > 0:
        rng = np.random.default_rng(cfg.dither_seed)
        x = x + cfg.dither * rng.standard_normal(len(x))
    return frame_signal(x, cfg.frame_length, cfg.frame_shift)


def log_mel_energies(buf: AudioBuffer, cfg: MfccConfig) -> np.ndarray:
    """Frames x mel-bins log filterbank energies (the stage before the DCT)."""
    frames = _frames_for(buf, cfg)
    if cfg.preemphasis:
        shifted = np.concatenate([frames[:, :1], frames[:, :-1]], axis=1)
        frames = frames - cfg.preemphasis * shifted
    frames = frames * np.hamming(cfg.frame_length)[None, :]
    power = np.abs(np.fft.rfft(frames, n=cfg.n_fft, axis=1)) ** 2
    weights, _ = mel_filterbank(cfg)
    return np.log(np.maximum(power @ weights.T, ENERGY_FLOOR))


def compute_mfcc(buf: AudioBuffer, cfg: MfccConfig, utt_id: str = "") -> FeatureMatrix:
    fbank = log_mel_energies(buf, cfg)
    ceps = dct(fbank, type=2, norm="ortho", axis=1)[:, : cfg.num_ceps]
    return FeatureMatrix(ceps, cfg.frame_shift_ms, utt_id)


def frame_log_energy(buf: AudioBuffer, cfg: MfccConfig) -> np.ndarray:
    frames = _frames_for(buf, cfg) if len(buf) >= cfg.frame_length else np.zeros((0, cfg.frame_length))
    return np.log(np.maximum(np.sum(frames**2, axis=1), ENERGY_FLOOR))
