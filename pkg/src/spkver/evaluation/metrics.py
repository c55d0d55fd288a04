"""Detection metrics: EER, minDCF, actDCF, Cllr and DET points.

A trial is accepted when its score is >= the threshold. Operating points are
taken at every distinct score plus +inf (reject all); the lowest distinct
score already accepts everything.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DcfParams:
    p_target: float = 0.01
    c_miss: float = 1.0
    c_fa: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.p_target < 1.0:
            raise ValueError("p_target must lie in (0, 1)")
        if self.c_miss <= 0 or self.c_fa <= 0:
            raise ValueError("costs must be positive")

    @property
    def bayes_threshold(self) -> float:
        return float(np.log(self.c_fa * (1 - self.p_target) / (self.c_miss * self.p_target)))

    @property
    def normalizer(self) -> float:
        return min(self.c_miss * self.p_target, self.c_fa * (1 - self.p_target))


def _split(scores, key):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    key = np.asarray(key, dtype=bool).reshape(-1)
    if scores.shape != key.shape:
        raise ValueError("scores and key differ in length")
    tar, non = scores[key], scores[~key]
    if tar.size == 0 or non.size == 0:
        raise ValueError("need at least one target and one nontarget trial")
    return tar, non


def operating_points(scores, key) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thresholds (ascending, ending with +inf) with their Pmiss and Pfa."""
    tar, non = _split(scores, key)
    thresholds = np.append(np.unique(np.concatenate([tar, non])), np.inf)
    p_miss = np.searchsorted(np.sort(tar), thresholds, side="left") / tar.size
    p_fa = 1.0 - np.searchsorted(np.sort(non), thresholds, side="left") / non.size
    return thresholds, p_miss, p_fa


def det_points(scores, key) -> list[tuple[float, float, float]]:
    """(threshold, Pfa, Pmiss) per operating point."""
    th, pm, pf = operating_points(scores, key)
    return [(float(t), float(f), float(m)) for t, f, m in zip(th, pf, pm)]


def eer(scores, key) -> float:
    """Equal error rate, interpolated linearly along the (Pfa, Pmiss) polyline."""
    _, pm, pf = operating_points(scores, key)
    pm = np.concatenate([[0.0], pm])
    pf = np.concatenate([[1.0], pf])
    d = pm - pf
    i = int(np.flatnonzero(d >= 0)[0])
    if d[i] == 0 or i == 0:
        return float(pm[i])
    t = -d[i - 1] / (d[i] - d[i - 1])
    return float(pm[i - 1] + t * (pm[i] - pm[i - 1]))


def _dcf(p_miss, p_fa, p: DcfParams):
    return (p.c_miss * p.p_target * p_miss + p.c_fa * (1 - p.p_target) * p_fa) / p.normalizer


def min_dcf(scores, key, params: DcfParams = DcfParams()) -> tuple[float, float]:
    """Normalised minimum DCF and the threshold that attains it."""
    th, pm, pf = operating_points(scores, key)
    cost = _dcf(pm, pf, params)
    i = int(np.argmin(cost))
    return float(cost[i]), float(th[i])


def act_dcf(llr, key, params: DcfParams = DcfParams()) -> float:
    """Normalised DCF of LLR scores at the Bayes threshold."""
    tar, non = _split(llr, key)
    theta = params.bayes_threshold
    return float(_dcf(np.mean(tar < theta), np.mean(non >= theta), params))


def cllr(llr, key) -> float:
    tar, non = _split(llr, key)
    return float((np.mean(np.logaddexp(0.0, -tar)) + np.mean(np.logaddexp(0.0, non))) / (2 * np.log(2)))


def report(scores, key, params: DcfParams = DcfParams(), llr: bool = True) -> dict:
    tar, non = _split(scores, key)
    out = {
        "eer": eer(scores, key),
        "min_dcf": min_dcf(scores, key, params)[0],
        "n_target": int(tar.size),
        "n_nontarget": int(non.size),
    }
    if llr:
        out["act_dcf"] = act_dcf(scores, key, params)
        out["cllr"] = cllr(scores, key)
    return out
