from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..corpus import AudioBuffer
from .mfcc import ENERGY_FLOOR, FeatureMatrix, MfccConfig, frame_log_energy


@dataclass(frozen=True)
class SadConfig:
    frame: MfccConfig = MfccConfig()
    bias: float = -0.1
    context: int = 5
    proportion_threshold: float = 0.6


def energy_sad(buf: AudioBuffer, cfg: SadConfig = SadConfig()) -> np.ndarray:
    """Boolean speech mask per frame, relative to the utterance mean log-energy.

    A frame is speech when its log-energy exceeds ``mean + bias`` and more than
    ``proportion_threshold`` of the frames within +-``context`` pass the same
    test. Frames at the energy floor (digital silence) never pass.
    """
    log_e = frame_log_energy(buf, cfg.frame)
    if log_e.size == 0:
        return np.zeros(0, dtype=bool)
    above = (log_e > log_e.mean() + cfg.bias) & (log_e > np.log(ENERGY_FLOOR))
    n = len(above)
    csum = np.concatenate([[0], np.cumsum(above)])
    lo = np.clip(np.arange(n) - cfg.context, 0, n)
    hi = np.clip(np.arange(n) + cfg.context + 1, 0, n)
    proportion = (csum[hi] - csum[lo]) / (hi - lo)
    return above & (proportion > cfg.proportion_threshold)


def speech_seconds(mask: np.ndarray, frame_shift_ms: float = 10.0) -> float:
    return float(np.count_nonzero(mask)) * frame_shift_ms / 1000.0


def select_speech_frames(feats: FeatureMatrix, mask: np.ndarray) -> FeatureMatrix:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (feats.num_frames,):
        raise ValueError(f"mask has {mask.shape[0]} entries for {feats.num_frames} frames")
    return feats.with_data(feats.data[mask])
