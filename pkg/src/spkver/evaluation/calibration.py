"""Affine score-to-LLR calibration by prior-weighted logistic regression."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

PARAM_BOUND = 100.0


@dataclass(frozen=True)
class CalibrationModel:
    a: float
    b: float
    prior: float = 0.5

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ValueError("calibration parameters must be finite")

    def apply(self, scores) -> np.ndarray:
        return self.a * np.asarray(scores, dtype=np.float64) + self.b


def _logit(p):
    return float(np.log(p / (1 - p)))


def calibration_objective(a: float, b: float, scores, key, prior: float = 0.5) -> float:
    """Prior-weighted cross-entropy of the LLRs ``a*s + b``, in bits (1.0 for LLR = 0)."""
    s = np.asarray(scores, dtype=np.float64)
    key = np.asarray(key, dtype=bool)
    z = a * s + b + _logit(prior)
    tar = np.mean(np.logaddexp(0.0, -z[key]))
    non = np.mean(np.logaddexp(0.0, z[~key]))
    return float((prior * tar + (1 - prior) * non) / np.log(2) / _entropy(prior))


def _entropy(p):
    return -(p * np.log2(p) + (1 - p) * np.log2(1 - p))


def calibrate(scores, key, prior: float = 0.5, tol: float = 1e-9, max_iter: int = 100, history: list | None = None) -> CalibrationModel:
    """Fit (a, b) by damped Newton iterations from (0, 0).

    Each step is halved until the objective does not increase, so the
    objective sequence (appended to ``history`` if given) is non-increasing.
    Separable data would push the parameters to infinity; they are scaled
    back to a largest magnitude of 100 with a warning.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    key = np.asarray(key, dtype=bool).reshape(-1)
    if s.shape != key.shape:
        raise ValueError("scores and key differ in length")
    if key.all() or not key.any():
        raise ValueError("calibration needs both target and nontarget trials")
    if not 0 < prior < 1:
        raise ValueError("prior must lie in (0, 1)")
    # per-trial weights and labels for the weighted logistic loss
    w = np.where(key, prior / key.sum(), (1 - prior) / (~key).sum())
    y = key.astype(np.float64)
    offset = _logit(prior)
    feats = np.stack([s, np.ones_like(s)], axis=1)

    def loss(theta):
        z = feats @ theta + offset
        return float(np.sum(w * np.where(key, np.logaddexp(0.0, -z), np.logaddexp(0.0, z))))

    theta = np.zeros(2)
    current = loss(theta)
    if history is not None:
        history.append(current)
    for _ in range(max_iter):
        z = feats @ theta + offset
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        grad = feats.T @ (w * (p - y))
        if np.linalg.norm(grad) < tol:
            break
        hess = (feats * (w * p * (1 - p))[:, None]).T @ feats
        step = np.linalg.pinv(hess) @ grad
        t = 1.0
        while t > 1e-10:
            cand = theta - t * step
            value = loss(cand)
            if value <= current:
                break
            t *= 0.5
        else:
            break
        if np.max(np.abs(cand)) > PARAM_BOUND:
            warnings.warn("calibration data look separable; clipping parameters", RuntimeWarning, stacklevel=2)
            theta = cand * (PARAM_BOUND / np.max(np.abs(cand)))
            break
        theta, current = cand, value
        if history is not None:
            history.append(current)
    return CalibrationModel(float(theta[0]), float(theta[1]), prior)
