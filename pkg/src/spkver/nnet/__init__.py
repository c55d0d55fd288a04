"""Embedding extractors: layer engine, architecture presets and training."""

from .arch import PRESETS, SYSTEMS, ArchSpec, LayerSpec, LstmSpec, get_arch, mini
from .layers import mfm_activation, splice, stats_pooling
from .losses import AsoftmaxHead, SoftmaxHead, asoftmax_loss, cross_entropy, psi
from .network import Network, center_crop
from .train import (
    TrainConfig,
    TrainingDivergedError,
    extract_embeddings,
    frobenius_orth_error,
    semi_orthogonal_step,
    train_extractor,
    training_accuracy,
)

__all__ = [
    "PRESETS", "SYSTEMS", "ArchSpec", "LayerSpec", "LstmSpec", "get_arch", "mini",
    "mfm_activation", "splice", "stats_pooling",
    "AsoftmaxHead", "SoftmaxHead", "asoftmax_loss", "cross_entropy", "psi",
    "Network", "center_crop",
    "TrainConfig", "TrainingDivergedError", "extract_embeddings", "frobenius_orth_error",
    "semi_orthogonal_step", "train_extractor", "training_accuracy",
]
