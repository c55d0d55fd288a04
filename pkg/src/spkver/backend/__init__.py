"""Embedding scoring back-ends and score normalisation."""

from .csml import CsmlConfig, train_csml, triplet_loss, triplet_loss_grad
from .scoring import (
    CosineScorer,
    CsmlModel,
    CsmlScorer,
    cosine_score,
    csml_score,
    make_scorer,
    model_vectors,
    score_trials,
)
from .snorm import CohortSet, cohort_stats, s_normalize, s_normalize_matrix, snorm_scores

__all__ = [
    "CsmlConfig", "train_csml", "triplet_loss", "triplet_loss_grad",
    "CosineScorer", "CsmlModel", "CsmlScorer", "cosine_score", "csml_score", "make_scorer",
    "model_vectors", "score_trials",
    "CohortSet", "cohort_stats", "s_normalize", "s_normalize_matrix", "snorm_scores",
]
