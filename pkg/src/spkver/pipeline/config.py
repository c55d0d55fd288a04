"""Experiment configuration: one JSON document with a version field."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from ..acoustics import RECIPES
from ..backend import CsmlConfig
from ..evaluation import ALIASES, STRATEGIES
from ..nnet import TrainConfig, get_arch

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG: dict = {
    "version": CONFIG_VERSION,
    "seed": 0,
    # corpus.dir: directory with corpus.json (train/dev/eval manifests, keys, noise);
    # when null the demo corpus is generated into the workspace
    "corpus": {
        "dir": None,
        "demo": {
            "n_speakers": 30,
            "train_speakers": 18,
            "dev_speakers": 6,
            "train_utts": 14,
            "test_utts": 24,
            "train_duration_s": [8.0, 12.0],
            "test_duration_s": [5.0, 8.0],
            "far_field": 0.5,
            "noise_files": 4,
        },
    },
    "frontend": {
        "sample_rate": 16000,
        "num_ceps": 40,
        "num_mel_bins": 40,
        "cmn_window_s": 3.0,
        "cmvn_after_sad": True,
        "wpe": False,
        "sad": {"bias": -0.1, "context": 5, "proportion_threshold": 0.6},
    },
    "augmentation": {"recipe": "fixdata2", "copies": 1, "n_rooms": 100, "per_speaker_cap": 8},
    "systems": [
        {"name": "xvec", "arch": "Xvec-TDNN-mini", "train": {"epochs": 16, "lr": 0.005, "lr_final": 0.0005}},
        {"name": "cvec", "arch": "Cvec-ResTDNN-mini", "train": {"epochs": 24, "lam_gamma": 0.02, "lam_min": 5.0}},
    ],
    "backend": {"type": "csml", "csml": {}},
    # cohort.file: embeddings container to use instead of the clean training embeddings
    "cohort": {"top_k": 200, "adaptive": True, "file": None},
    "evaluation": {
        "p_target": 0.01,
        "c_miss": 1.0,
        "c_fa": 1.0,
        "split_seed": 0,
        "strategy": "Fixed1",
        "calibration_prior": None,
    },
}


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict) and base[key]:
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate(cfg: dict) -> dict:
    if cfg.get("version") != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {cfg.get('version')!r}; expected {CONFIG_VERSION}")
    if not isinstance(cfg.get("seed"), int):
        raise ConfigError("config needs an integer global seed")
    corpus_dir = cfg["corpus"]["dir"]
    if corpus_dir is not None and not (Path(corpus_dir) / "corpus.json").is_file():
        raise ConfigError(f"corpus.dir {corpus_dir!r} has no corpus.json")
    recipe = cfg["augmentation"]["recipe"]
    if recipe.lower() not in RECIPES:
        raise ConfigError(f"unknown augmentation recipe {recipe!r}")
    systems = cfg["systems"]
    if not systems:
        raise ConfigError("at least one system is required")
    names = [s.get("name") for s in systems]
    if len(set(names)) != len(names) or not all(names):
        raise ConfigError("system names must be unique and non-empty")
    for s in systems:
        unknown = set(s) - {"name", "arch", "train"}
        if unknown:
            raise ConfigError(f"system {s['name']!r}: unknown key(s) {sorted(unknown)}")
        try:
            get_arch(s["arch"])
        except KeyError as exc:
            raise ConfigError(f"system {s['name']!r}: {exc.args[0]}") from None
        try:
            TrainConfig(**s.get("train", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"system {s['name']!r} training section: {exc}") from None
    if cfg["backend"]["type"] not in ("cosine", "csml"):
        raise ConfigError(f"unknown backend {cfg['backend']['type']!r}")
    try:
        CsmlConfig(**cfg["backend"]["csml"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"backend.csml: {exc}") from None
    strategy = cfg["evaluation"]["strategy"]
    if strategy not in STRATEGIES and strategy not in ALIASES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    cohort_file = cfg["cohort"]["file"]
    if cohort_file is not None and not Path(cohort_file).is_file():
        raise ConfigError(f"cohort.file {cohort_file!r} does not exist")
    if cfg["cohort"]["top_k"] < 2:
        raise ConfigError("cohort.top_k must be >= 2")
    return cfg


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON file at ``path``, then ``overrides``; validated."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        if "version" not in user:
            raise ConfigError(f"{path}: missing 'version' field")
        cfg = _merge(cfg, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    return validate(cfg)


def config_hash(section) -> str:
    return hashlib.sha256(json.dumps(section, sort_keys=True).encode("utf-8")).hexdigest()
