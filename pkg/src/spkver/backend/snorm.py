"""Symmetric score normalisation against an imposter cohort."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..corpus import EmbeddingSet, ScoreSet, TrialList
from .scoring import CosineScorer, model_vectors

SIGMA_FLOOR = 1e-6


@dataclass
class CohortSet:
    embeddings: EmbeddingSet
    top_k: int = 200

    def __post_init__(self):
        if len(self.embeddings) < 2:
            raise ValueError("cohort needs at least two embeddings")
        # clip to the cohort size, keep at least two
        self.top_k = max(2, min(int(self.top_k), len(self.embeddings)))

    @property
    def ids(self) -> list[str]:
        return list(self.embeddings)


def cohort_stats(scores: np.ndarray, top_k: int | None = None, exclude: np.ndarray | None = None):
    """Mean and floored std of each row's ``top_k`` highest cohort scores.

    ``exclude`` masks cohort entries (same utterance as the row) out of the
    selection. ``top_k=None`` uses the whole cohort.
    """
    s = np.array(scores, dtype=np.float64, ndmin=2)
    if exclude is not None:
        s = np.where(exclude, -np.inf, s)
    available = np.isfinite(s).sum(axis=1)
    k = s.shape[1] if top_k is None else int(top_k)
    if k < 1 or np.any(available < 1):
        raise ValueError(f"cohort too small for top_k={k}")
    # rows that lost cohort entries to exclusion use what is left
    k_row = np.minimum(k, available)
    top = -np.sort(-s, axis=1)[:, : int(k_row.max())]
    keep = np.arange(top.shape[1])[None, :] < k_row[:, None]
    top = np.where(keep, top, 0.0)
    mu = top.sum(axis=1) / k_row
    var = (np.where(keep, top - mu[:, None], 0.0) ** 2).sum(axis=1) / k_row
    sigma = np.maximum(np.sqrt(var), SIGMA_FLOOR)
    return mu, sigma


def snorm_scores(raw, mu_e, sigma_e, mu_t, sigma_t) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    return 0.5 * ((raw - mu_e) / np.maximum(sigma_e, SIGMA_FLOOR) + (raw - mu_t) / np.maximum(sigma_t, SIGMA_FLOOR))


def s_normalize_matrix(raw, cohort_e, cohort_t, top_k: int | None = None) -> np.ndarray:
    """Score-level s-norm: ``raw`` is per trial, cohort rows align with the trials."""
    mu_e, sd_e = cohort_stats(cohort_e, top_k)
    mu_t, sd_t = cohort_stats(cohort_t, top_k)
    return snorm_scores(raw, mu_e, sd_e, mu_t, sd_t)


def s_normalize(
    raw: ScoreSet,
    model_embs: EmbeddingSet,
    test_embs: EmbeddingSet,
    cohort: CohortSet,
    scorer: CosineScorer,
    enrollment: Mapping[str, Sequence[str]] | None = None,
    adaptive: bool = True,
) -> ScoreSet:
    """Adaptive s-norm of ``raw``; statistics are computed once per model and test id."""
    trials = TrialList(raw.trials)
    models, tests = trials.model_ids(), trials.test_ids()
    cohort_ids = cohort.ids
    cohort_mat = cohort.embeddings.matrix(cohort_ids)
    k = cohort.top_k if adaptive else None
    cid = np.array(cohort_ids)

    def side(ids, vectors):
        scores = scorer.matrix(vectors, cohort_mat)
        exclude = np.array(ids)[:, None] == cid[None, :]
        return dict(zip(ids, zip(*cohort_stats(scores, k, exclude))))

    stats_e = side(models, model_vectors(model_embs, models, enrollment))
    stats_t = side(tests, model_vectors(test_embs, tests))
    mu_e, sd_e = np.array([stats_e[m] for m, _ in trials.trials]).T
    mu_t, sd_t = np.array([stats_t[t] for _, t in trials.trials]).T
    return raw.with_scores(snorm_scores(raw.scores, mu_e, sd_e, mu_t, sd_t), "snorm")
