from __future__ import annotations

import warnings

import numpy as np

from .mfcc import FeatureMatrix

VARIANCE_FLOOR = 1e-8


def apply_cmn_sliding(feats: FeatureMatrix, window_s: float = 3.0) -> FeatureMatrix:
    """Subtract a centred sliding-window mean from every frame.

    The window spans ``window_s`` seconds rounded to an odd frame count. Near
    the edges it is truncated to the frames that exist, so edge windows are
    asymmetric; utterances shorter than the window use the global mean.
    """
    if window_s <= 0:
        raise ValueError("window_s must be positive")
    x = feats.data
    n = x.shape[0]
    if n == 0:
        raise ValueError("cannot normalise an empty feature matrix")
    half = int(round(window_s * 1000.0 / feats.frame_shift_ms)) // 2
    if n <= 2 * half + 1:
        means = x.mean(axis=0, dtype=np.float64)[None, :]
    else:
        t = np.arange(n)
        lo, hi = np.maximum(t - half, 0), np.minimum(t + half + 1, n)
        csum = np.concatenate([np.zeros((1, x.shape[1])), np.cumsum(x, axis=0, dtype=np.float64)])
        means = (csum[hi] - csum[lo]) / (hi - lo)[:, None]
    return feats.with_data((x - means).astype(x.dtype, copy=False))


def apply_cmvn_global(feats: FeatureMatrix, variance_floor: float = VARIANCE_FLOOR) -> FeatureMatrix:
    """Per-dimension zero mean / unit (population) variance over the utterance."""
    x = feats.data
    if x.shape[0] < 2:
        raise ValueError("global CMVN needs at least 2 frames")
    mean = x.mean(axis=0, dtype=np.float64)
    var = x.var(axis=0, dtype=np.float64)
    if np.any(var < variance_floor):
        warnings.warn(f"{int(np.sum(var < variance_floor))} constant feature dimension(s); variance floored", RuntimeWarning, stacklevel=2)
    out = (x - mean) / np.sqrt(np.maximum(var, variance_floor))
    return feats.with_data(out.astype(x.dtype, copy=False))
