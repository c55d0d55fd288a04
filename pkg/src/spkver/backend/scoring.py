"""Cosine and CSML scoring of embedding pairs."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..corpus import ContainerError, EmbeddingSet, ScoreSet, TrialList

CSML_MAGIC = b"SVCB"
NORM_EPS = 1e-12


def _unit_rows(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms <= NORM_EPS):
        raise ValueError("zero-norm vector cannot be cosine-scored")
    return x / norms


def cosine_score(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch {u.shape} vs {v.shape}")
    return float(np.clip(_unit_rows(u)[0] @ _unit_rows(v)[0], -1.0, 1.0))


@dataclass(frozen=True)
class CsmlModel:
    A: np.ndarray
    margin: float = 0.2
    seed: int = 0

    def __post_init__(self):
        a = np.asarray(self.A, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("A must be square")
        if not np.all(np.isfinite(a)):
            raise ValueError("A must be finite")
        object.__setattr__(self, "A", a)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @classmethod
    def identity(cls, dim: int, margin: float = 0.2, seed: int = 0) -> "CsmlModel":
        return cls(np.eye(dim), margin, seed)

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected {self.dim}-dim embeddings, got {x.shape[-1]}")
        return x @ self.A.T

    def save(self, path) -> None:
        header = CSML_MAGIC + struct.pack("<IIQd", 1, self.dim, self.seed, self.margin)
        Path(path).write_bytes(header + np.ascontiguousarray(self.A, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "CsmlModel":
        data = Path(path).read_bytes()
        if data[:4] != CSML_MAGIC:
            raise ContainerError(f"{path}: not a CSML model")
        fmt = "<IIQd"
        head = 4 + struct.calcsize(fmt)
        if len(data) < head:
            raise ContainerError(f"{path}: truncated header")
        version, dim, seed, margin = struct.unpack_from(fmt, data, 4)
        if version != 1:
            raise ContainerError(f"{path}: unsupported version {version}")
        if len(data) != head + 4 * dim * dim:
            raise ContainerError(f"{path}: expected {dim}x{dim} matrix")
        a = np.frombuffer(data, "<f4", dim * dim, head).reshape(dim, dim)
        return cls(a.astype(np.float64), margin, seed)


def csml_score(model: CsmlModel, u, v) -> float:
    return cosine_score(model.transform(u), model.transform(v))


class CosineScorer:
    name = "cosine"

    def prepare(self, x: np.ndarray) -> np.ndarray:
        return _unit_rows(x)

    def matrix(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """All-pairs scores between the rows of ``a`` and ``b``."""
        return np.clip(self.prepare(a) @ self.prepare(b).T, -1.0, 1.0)


class CsmlScorer(CosineScorer):
    name = "csml"

    def __init__(self, model: CsmlModel):
        self.model = model

    def prepare(self, x):
        return _unit_rows(self.model.transform(x))


def make_scorer(backend: str, model: CsmlModel | None = None) -> CosineScorer:
    if backend == "cosine":
        return CosineScorer()
    if backend == "csml":
        if model is None:
            raise ValueError("csml scoring needs a trained model")
        return CsmlScorer(model)
    raise ValueError(f"unknown backend {backend!r}")


def model_vectors(
    embeddings: EmbeddingSet, ids: Sequence[str], enrollment: Mapping[str, Sequence[str]] | None = None
) -> np.ndarray:
    """Rows for ``ids``; with ``enrollment`` a model is the mean of its unit-length utterance embeddings."""
    rows = []
    for mid in ids:
        utts = enrollment.get(mid, [mid]) if enrollment else [mid]
        missing = [u for u in utts if u not in embeddings]
        if missing:
            raise KeyError(f"no embedding for {missing[0]!r}")
        rows.append(_unit_rows(embeddings.matrix(list(utts))).mean(axis=0))
    return np.array(rows).reshape(len(rows), embeddings.dim)


def score_trials(
    trials: TrialList,
    model_embs: EmbeddingSet,
    test_embs: EmbeddingSet,
    scorer: CosineScorer,
    enrollment: Mapping[str, Sequence[str]] | None = None,
) -> ScoreSet:
    models, tests = trials.model_ids(), trials.test_ids()
    mat = scorer.matrix(model_vectors(model_embs, models, enrollment), model_vectors(test_embs, tests))
    mi = {m: i for i, m in enumerate(models)}
    ti = {t: i for i, t in enumerate(tests)}
    scores = np.array([mat[mi[m], ti[t]] for m, t in trials.trials])
    return ScoreSet(trials.trials, scores, "raw")
