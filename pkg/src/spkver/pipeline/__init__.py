"""Experiment configuration, memoised stages and the end-to-end runner."""

from .config import CONFIG_VERSION, DEFAULT_CONFIG, ConfigError, config_hash, load_config, validate
from .demo import DemoSpec, generate_demo_corpus, speaker_voice, synthesize_utterance
from .run import Experiment, run_all
from .stages import (
    WORKSPACE_DIRS,
    ArtifactHashError,
    MissingArtifactError,
    StageError,
    Workspace,
    hash_path,
    run_stage,
)

__all__ = [
    "CONFIG_VERSION",
    "DEFAULT_CONFIG",
    "ConfigError",
    "config_hash",
    "load_config",
    "validate",
    "DemoSpec",
    "generate_demo_corpus",
    "speaker_voice",
    "synthesize_utterance",
    "Experiment",
    "run_all",
    "WORKSPACE_DIRS",
    "ArtifactHashError",
    "MissingArtifactError",
    "StageError",
    "Workspace",
    "hash_path",
    "run_stage",
]
