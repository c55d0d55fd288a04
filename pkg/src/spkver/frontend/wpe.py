"""Single-channel weighted prediction error (WPE) dereverberation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from ..corpus import AudioBuffer


@dataclass(frozen=True)
class WpeConfig:
    stft_size: int = 512
    stft_shift: int = 128
    taps: int = 10
    delay: int = 3
    iterations: int = 3
    variance_floor: float = 1e-10
    # diagonal loading of the correlation matrix, relative to its mean diagonal
    loading: float = 1e-6


def delayed_taps(spec: np.ndarray, taps: int, delay: int) -> np.ndarray:
    """Stack delayed copies: (F, T) -> (F, taps, T), tap k holds frame t - delay - k."""
    n_freq, n_frames = spec.shape
    out = np.zeros((n_freq, taps, n_frames), dtype=spec.dtype)
    for k in range(taps):
        d = delay + k
        if d >= n_frames:
            break
        out[:, k, d:] = spec[:, : n_frames - d]
    return out


def wpe_spectrum(spec: np.ndarray, cfg: WpeConfig = WpeConfig()) -> np.ndarray:
    """Dereverberate an (F, T) complex STFT.

    Each iteration re-estimates the per-bin, per-frame power of the desired
    signal, solves the variance-weighted least-squares prediction of the
    current frame from delayed frames, and subtracts the prediction.
    """
    stacked = delayed_taps(spec, cfg.taps, cfg.delay)
    out = spec
    eye = np.eye(cfg.taps)
    for _ in range(cfg.iterations):
        power = np.maximum(np.abs(out) ** 2, cfg.variance_floor)
        weighted = stacked / power[:, None, :]
        corr = np.einsum("fkt,flt->fkl", weighted, stacked.conj())
        cross = np.einsum("fkt,ft->fk", weighted, spec.conj())
        load = cfg.loading * np.real(np.trace(corr, axis1=1, axis2=2)) / cfg.taps + cfg.variance_floor
        filt = np.linalg.solve(corr + load[:, None, None] * eye, cross[..., None])[..., 0]
        out = spec - np.einsum("fk,fkt->ft", filt.conj(), stacked)
    return out


def wpe_dereverberate(buf: AudioBuffer, cfg: WpeConfig = WpeConfig()) -> AudioBuffer:
    n = len(buf)
    if n < cfg.stft_size:
        raise ValueError(f"audio has {n} samples, shorter than one {cfg.stft_size}-sample STFT frame")
    kwargs = dict(fs=buf.sample_rate, window="hann", nperseg=cfg.stft_size, noverlap=cfg.stft_size - cfg.stft_shift)
    _, _, spec = signal.stft(buf.samples, **kwargs)
    _, y = signal.istft(wpe_spectrum(spec, cfg), **kwargs)
    y = np.real(y)[:n]
    if y.shape[0] < n:
        y = np.pad(y, (0, n - y.shape[0]))
    return AudioBuffer(y, buf.sample_rate)
