"""Shoebox room impulse responses by the Allen-Berkley image method."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from ..corpus import AudioBuffer

SINC_TAPS = 81


@dataclass(frozen=True)
class RoomSpec:
    dims: tuple[float, float, float]
    # reflection coefficients (x=0, x=Lx, y=0, y=Ly, z=0, z=Lz)
    wall_reflectivity: tuple[float, float, float, float, float, float]
    speed_of_sound: float = 340.0
    sample_rate: int = 16000

    def __post_init__(self):
        dims = tuple(float(d) for d in self.dims)
        beta = self.wall_reflectivity
        if np.isscalar(beta):
            beta = (beta,) * 6
        beta = tuple(float(b) for b in beta)
        if len(dims) != 3 or min(dims) <= 0:
            raise ValueError(f"room dims must be three positive lengths, got {dims}")
        if len(beta) != 6 or not all(0.0 <= b < 1.0 for b in beta):
            raise ValueError(f"need six reflection coefficients in [0, 1), got {beta}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "wall_reflectivity", beta)

    @property
    def volume(self) -> float:
        lx, ly, lz = self.dims
        return lx * ly * lz

    def sabine_t60(self) -> float:
        """Sabine T60 with absorption 1 - beta^2 per wall."""
        lx, ly, lz = self.dims
        areas = (ly * lz, ly * lz, lx * lz, lx * lz, lx * ly, lx * ly)
        absorption = sum(a * (1.0 - b * b) for a, b in zip(areas, self.wall_reflectivity))
        return 0.161 * self.volume / absorption

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p > 0) and np.all(p < np.asarray(self.dims)))


@dataclass(frozen=True)
class Rir:
    taps: np.ndarray
    sample_rate: int

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(taps)) or not np.any(taps):
            raise ValueError("RIR needs finite taps with at least one non-zero value")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)


def _axis_images(src: float, mic: float, length: float, max_n: int):
    n = np.arange(-max_n, max_n + 1)
    n = np.concatenate([n, n])
    p = np.repeat([0, 1], 2 * max_n + 1)
    offset = (1 - 2 * p) * src + 2 * n * length - mic
    return offset, np.abs(n - p), np.abs(n)


def generate_rir(
    room: RoomSpec,
    src,
    mic,
    max_order: int = 12,
    length_s: float = 0.5,
    prune_db: float | None = -60.0,
    highpass_hz: float | None = None,
) -> Rir:
    """Image-method RIR.

    Every image with total reflection order <= ``max_order`` that arrives
    within ``length_s`` contributes ``prod(beta ** hits) / (4 pi d)`` at delay
    ``d / c * fs``, placed with an 81-tap Hann-windowed sinc. Images weaker than
    ``prune_db`` relative to the strongest one are skipped (None keeps all).

    With every reflection coefficient positive the overlapping pulses build up
    a DC offset that inflates the late tail; ``highpass_hz`` applies Allen and
    Berkley's second-order DC-blocking filter to remove it.
    """
    src = np.asarray(src, dtype=float)
    mic = np.asarray(mic, dtype=float)
    if not room.contains(src):
        raise ValueError(f"source {src.tolist()} is outside the room")
    if not room.contains(mic):
        raise ValueError(f"microphone {mic.tolist()} is outside the room")
    if np.linalg.norm(src - mic) < 1e-6:
        raise ValueError("source and microphone coincide")
    if max_order < 0:
        raise ValueError("max_order must be >= 0")

    fs, c = room.sample_rate, room.speed_of_sound
    n_taps = int(np.ceil(length_s * fs))
    max_dist = c * length_s + np.linalg.norm(room.dims)
    beta = room.wall_reflectivity

    axes = []
    for axis in range(3):
        max_n = min(max_order, int(np.ceil(max_dist / (2 * room.dims[axis]))) + 1)
        off, h0, h1 = _axis_images(src[axis], mic[axis], room.dims[axis], max_n)
        gain = beta[2 * axis] ** h0 * beta[2 * axis + 1] ** h1
        axes.append((off, h0 + h1, gain))
    (ox, kx, gx), (oy, ky, gy), (oz, kz, gz) = axes

    order = kx[:, None, None] + ky[None, :, None] + kz[None, None, :]
    dist2 = ox[:, None, None] ** 2 + oy[None, :, None] ** 2 + oz[None, None, :] ** 2
    keep = (order <= max_order) & (dist2 <= max_dist**2)
    ix, iy, iz = np.nonzero(keep)
    dist = np.sqrt(dist2[ix, iy, iz])
    amp = gx[ix] * gy[iy] * gz[iz] / (4 * np.pi * dist)
    delay = dist / c * fs

    live = (amp > 0) & (delay < n_taps + SINC_TAPS // 2)
    if prune_db is not None and np.any(live):
        live &= amp >= amp[live].max() * 10 ** (prune_db / 20)
    amp, delay = amp[live], delay[live]

    half = SINC_TAPS // 2
    offsets = np.arange(-half, half + 1)[None, :]
    taps = np.zeros(n_taps)
    for lo in range(0, amp.shape[0], 20000):
        a, d = amp[lo:lo + 20000], delay[lo:lo + 20000]
        idx = np.round(d).astype(np.int64)[:, None] + offsets
        t = idx - d[:, None]
        values = a[:, None] * np.sinc(t) * 0.5 * (1 + np.cos(np.pi * t / (half + 1)))
        ok = (idx >= 0) & (idx < n_taps)
        taps += np.bincount(idx[ok], weights=values[ok], minlength=n_taps)[:n_taps]
    if highpass_hz:
        taps = allen_berkley_highpass(taps, highpass_hz, fs)
    return Rir(taps, fs)


def allen_berkley_highpass(taps: np.ndarray, cutoff_hz: float, sample_rate: int) -> np.ndarray:
    w = 2 * np.pi * cutoff_hz / sample_rate
    r1 = np.exp(-w)
    b1, b2 = 2 * r1 * np.cos(w), -r1 * r1
    return signal.lfilter([1.0, -(1.0 + r1), r1], [1.0, -b1, -b2], taps)


def schroeder_t60(rir: Rir, fit_db: tuple[float, float] = (-5.0, -35.0)) -> float:
    """T60 from a line fit to the Schroeder backward-integrated decay curve."""
    energy = np.cumsum(rir.taps[::-1] ** 2)[::-1]
    edc = 10 * np.log10(np.maximum(energy / energy[0], 1e-300))
    hi, lo = fit_db
    sel = np.flatnonzero((edc <= hi) & (edc >= lo))
    if sel.size < 2:
        raise ValueError("decay curve does not span the fit range; lengthen the RIR")
    t = sel / rir.sample_rate
    slope = np.polyfit(t, edc[sel], 1)[0]
    return -60.0 / slope


def reverberate(buf: AudioBuffer, rir: Rir, normalize: bool = True) -> AudioBuffer:
    return reverberate_with_scale(buf, rir, normalize)[0]


def reverberate_with_scale(buf: AudioBuffer, rir: Rir, normalize: bool = True) -> tuple[AudioBuffer, float]:
    """Linear convolution truncated to the input length.

    Output is peak-normalised only when it would exceed 1; the applied scale is
    returned alongside.
    """
    if buf.sample_rate != rir.sample_rate:
        raise ValueError(f"audio at {buf.sample_rate} Hz, RIR at {rir.sample_rate} Hz")
    y = signal.fftconvolve(buf.samples, rir.taps)[: len(buf)]
    scale = 1.0
    peak = np.max(np.abs(y)) if y.size else 0.0
    if normalize and peak > 1.0:
        scale = 1.0 / peak
        y = y * scale
    return AudioBuffer(y, buf.sample_rate), scale
