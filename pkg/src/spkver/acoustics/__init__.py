"""Image-method room simulation and training-data augmentation recipes."""

from .augment import (
    RECIPES,
    AugmentationRecipe,
    EmptyManifestError,
    RirBank,
    RirSettings,
    RoomRanges,
    RoomSetup,
    augment_utterance,
    build_training_manifest,
    get_recipe,
    mix_at_snr,
    sample_room_setup,
)
from .rir import Rir, RoomSpec, generate_rir, reverberate, reverberate_with_scale, schroeder_t60

__all__ = [
    "RECIPES",
    "AugmentationRecipe",
    "EmptyManifestError",
    "Rir",
    "RirBank",
    "RirSettings",
    "RoomRanges",
    "RoomSetup",
    "RoomSpec",
    "augment_utterance",
    "build_training_manifest",
    "generate_rir",
    "get_recipe",
    "mix_at_snr",
    "reverberate",
    "reverberate_with_scale",
    "sample_room_setup",
    "schroeder_t60",
]
