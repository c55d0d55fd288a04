"""Linear score fusion and the split-development submission strategies."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..corpus import ScoreSet, TrialFileError, TrialList
from .calibration import CalibrationModel, calibrate
from .metrics import DcfParams, min_dcf

STRATEGIES = ("Fixed1", "Fixed2", "Fixed3")
ALIASES = {"Open1": "Fixed1", "Open2": "Fixed2", "Open3": "Fixed3"}
MIN_DCF_FLOOR = 1e-3


@dataclass(frozen=True)
class FusionModel:
    weights: tuple[float, ...]
    mode: str = "equal"

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if not w or not all(np.isfinite(w)):
            raise ValueError("fusion weights must be finite and non-empty")
        if self.mode not in ("equal", "empirical", "fixed"):
            raise ValueError(f"unknown fusion mode {self.mode!r}")
        if self.mode == "equal" and len(set(w)) != 1:
            raise ValueError("equal mode needs identical weights")
        object.__setattr__(self, "weights", w)

    @classmethod
    def equal(cls, n: int) -> "FusionModel":
        return cls((1.0 / n,) * n, "equal")


def fuse(score_sets: Sequence[ScoreSet], model: FusionModel) -> ScoreSet:
    if len(score_sets) != len(model.weights):
        raise ValueError(f"{len(score_sets)} score sets for {len(model.weights)} weights")
    first = score_sets[0]
    for other in score_sets[1:]:
        if other.trials != first.trials:
            raise TrialFileError("fusion inputs must share one trial list in one order")
    total = np.zeros(len(first))
    for w, s in zip(model.weights, score_sets):
        total += w * s.scores
    return first.with_scores(total, "fused")


def empirical_weights(score_sets: Sequence[ScoreSet], key, params: DcfParams = DcfParams()) -> FusionModel:
    """Weights proportional to 1 / minDCF of each set, summing to one."""
    inv = np.array([1.0 / max(min_dcf(s.scores, key, params)[0], MIN_DCF_FLOOR) for s in score_sets])
    return FusionModel(tuple(inv / inv.sum()), "empirical")


@dataclass(frozen=True)
class DevSplit:
    """Two halves of a keyed development trial list, as index arrays into it."""

    trials: TrialList
    first: np.ndarray
    second: np.ndarray

    @property
    def devset_I(self) -> TrialList:  # noqa: N802
        return self.trials.subset(self.first)

    @property
    def devset_II(self) -> TrialList:  # noqa: N802
        return self.trials.subset(self.second)

    def halves(self, name: str) -> np.ndarray:
        return {"I": self.first, "II": self.second}[name]


def split_devset(trials: TrialList, seed: int = 0) -> DevSplit:
    """Random half split, stratified by target / nontarget label."""
    labels = trials.labels
    rng = np.random.default_rng(seed)
    first, second = [], []
    for value in (True, False):
        idx = rng.permutation(np.flatnonzero(labels == value))
        half = (len(idx) + 1) // 2
        first.extend(idx[:half])
        second.extend(idx[half:])
    return DevSplit(trials, np.sort(first), np.sort(second))


@dataclass(frozen=True)
class ScoreNorm:
    """Per-subsystem standardisation with statistics from one development half."""

    mean: float
    std: float

    @classmethod
    def fit(cls, scores: np.ndarray) -> "ScoreNorm":
        return cls(float(np.mean(scores)), float(max(np.std(scores), 1e-12)))

    def apply(self, scores: np.ndarray) -> np.ndarray:
        return (np.asarray(scores) - self.mean) / self.std


@dataclass
class StrategyResult:
    llr: ScoreSet
    branches: list[dict] = field(default_factory=list)


def _branch(dev, evals, split, labels, norm_half, cal_half, weighting, params, prior, fixed_weights):
    norm_idx, cal_idx = split.halves(norm_half), split.halves(cal_half)
    norms = [ScoreNorm.fit(d.scores[norm_idx]) for d in dev]
    if fixed_weights is not None:
        model = FusionModel(tuple(fixed_weights), "fixed")
    elif weighting == "empirical":
        normed_half = [ScoreSet(tuple(d.trials[i] for i in norm_idx), n.apply(d.scores[norm_idx])) for d, n in zip(dev, norms)]
        model = empirical_weights(normed_half, labels[norm_idx], params)
    else:
        model = FusionModel.equal(len(dev))
    fused_dev = fuse([d.with_scores(n.apply(d.scores)) for d, n in zip(dev, norms)], model)
    fused_eval = fuse([e.with_scores(n.apply(e.scores)) for e, n in zip(evals, norms)], model)
    cal = calibrate(fused_dev.scores[cal_idx], labels[cal_idx], prior)
    info = {
        "normalize_on": norm_half,
        "calibrate_on": cal_half,
        "weights": list(model.weights),
        "calibration": {"a": cal.a, "b": cal.b},
        "norms": [(n.mean, n.std) for n in norms],
    }
    return cal.apply(fused_eval.scores), info


def run_strategy(
    strategy: str,
    dev_scores: Sequence[ScoreSet],
    eval_scores: Sequence[ScoreSet],
    split: DevSplit,
    params: DcfParams = DcfParams(),
    prior: float | None = None,
    weights: Sequence[float] | None = None,
) -> StrategyResult:
    """Normalise, fuse and calibrate subsystem scores into eval LLRs.

    ``dev_scores`` follow ``split.trials``. Fixed1 averages two branches with
    the halves' roles swapped; Fixed2 normalises on devset-II and calibrates
    on devset-I; Fixed3 uses empirical weights and devset-II for both.
    ``weights`` overrides the fusion weights.
    """
    strategy = ALIASES.get(strategy, strategy)
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES + tuple(ALIASES)}")
    if not dev_scores or len(dev_scores) != len(eval_scores):
        raise ValueError("need matching dev and eval score sets for every subsystem")
    dev = [d.aligned_to(split.trials) for d in dev_scores]
    evals = [e.aligned_to(TrialList(eval_scores[0].trials)) for e in eval_scores]
    labels = split.trials.labels
    prior = params.p_target if prior is None else prior
    args = (dev, evals, split, labels)
    if strategy == "Fixed1":
        a, info_a = _branch(*args, "II", "I", "equal", params, prior, weights)
        b, info_b = _branch(*args, "I", "II", "equal", params, prior, weights)
        return StrategyResult(evals[0].with_scores((a + b) / 2, "llr"), [info_a, info_b])
    if strategy == "Fixed2":
        a, info = _branch(*args, "II", "I", "equal", params, prior, weights)
    else:
        a, info = _branch(*args, "II", "II", "empirical", params, prior, weights)
    return StrategyResult(evals[0].with_scores(a, "llr"), [info])
