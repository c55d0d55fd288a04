"""Cosine similarity metric learning with a triplet hinge loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scoring import CsmlModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CsmlConfig:
    margin: float = 0.2
    lr: float = 0.01
    momentum: float = 0.9
    lr_decay: float = 0.5  # applied when validation loss stops improving
    epochs: int = 20
    speakers_per_batch: int = 8
    utts_per_speaker: int = 4
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.lr < 0 or self.epochs < 0:
            raise ValueError("lr and epochs must be non-negative")
        if self.speakers_per_batch < 2 or self.utts_per_speaker < 2:
            raise ValueError("batches need >= 2 speakers with >= 2 utterances each")


def _unit(y):
    norms = np.maximum(np.linalg.norm(y, axis=1, keepdims=True), 1e-12)
    return y / norms, norms


def triplet_terms(A: np.ndarray, x: np.ndarray, labels: np.ndarray, margin: float):
    """Hinge coefficient matrix C and per-triplet losses for one batch.

    Every (anchor, positive) pair is matched with the anchor's hardest negative
    under the current transform. The loss is ``sum(C * S) + margin * n_active``
    divided by the triplet count, where S is the transformed cosine matrix.
    """
    yn, _ = _unit(x @ A.T)
    s = yn @ yn.T
    same = labels[:, None] == labels[None, :]
    neg_s = np.where(same, -np.inf, s)
    hard = neg_s.argmax(axis=1)
    a_idx, p_idx = np.nonzero(same & ~np.eye(len(labels), dtype=bool))
    n_idx = hard[a_idx]
    losses = margin - s[a_idx, p_idx] + s[a_idx, n_idx]
    active = losses > 0
    c = np.zeros_like(s)
    np.add.at(c, (a_idx[active], p_idx[active]), -1.0)
    np.add.at(c, (a_idx[active], n_idx[active]), 1.0)
    return c, np.maximum(losses, 0.0)


def triplet_loss(A: np.ndarray, x: np.ndarray, labels, margin: float = 0.2) -> float:
    labels = np.asarray(labels)
    _, losses = triplet_terms(A, x, labels, margin)
    return float(losses.mean()) if losses.size else 0.0


def triplet_loss_grad(A: np.ndarray, x: np.ndarray, labels, margin: float = 0.2) -> tuple[float, np.ndarray]:
    """Mean hinge loss over hardest-negative triplets and its gradient in A."""
    labels = np.asarray(labels)
    c, losses = triplet_terms(A, x, labels, margin)
    if not losses.size:
        return 0.0, np.zeros_like(A)
    c /= losses.size
    y = x @ A.T
    yn, norms = _unit(y)
    g_n = (c + c.T) @ yn
    g_y = (g_n - np.sum(g_n * yn, axis=1, keepdims=True) * yn) / norms
    return float(losses.mean()), g_y.T @ x


def _split_validation(labels, fraction, rng):
    train, val = [], []
    for spk in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == spk))
        n_val = int(round(fraction * len(idx))) if len(idx) >= 4 else 0
        val.extend(idx[:n_val])
        train.extend(idx[n_val:])
    return np.array(sorted(train)), np.array(sorted(val), dtype=np.int64)


def _batches(labels, cfg, rng):
    speakers = np.unique(labels)
    by_spk = {s: rng.permutation(np.flatnonzero(labels == s)) for s in speakers}
    n_batches = max(1, int(np.ceil(len(labels) / (cfg.speakers_per_batch * cfg.utts_per_speaker))))
    for _ in range(n_batches):
        chosen = rng.choice(speakers, size=min(cfg.speakers_per_batch, len(speakers)), replace=False)
        idx = []
        for s in chosen:
            pool = by_spk[s]
            idx.extend(rng.choice(pool, size=min(cfg.utts_per_speaker, len(pool)), replace=False))
        yield np.array(idx)


def train_csml(embeddings: np.ndarray, labels: Sequence, cfg: CsmlConfig = CsmlConfig(), seed: int = 0) -> CsmlModel:
    """Learn A for cosine scoring of ``A @ x``, starting from the identity.

    A held-out part of each speaker's utterances monitors the loss; the
    learning rate is scaled by ``lr_decay`` when that loss fails to improve
    and the best A seen (the identity included) is returned.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or len(x) != len(labels):
        raise ValueError("need one label per embedding row")
    speakers, counts = np.unique(labels, return_counts=True)
    if len(speakers) < 2:
        raise ValueError("CSML training needs at least two speakers")
    if np.sum(counts >= 2) < 2:
        raise ValueError("CSML training needs two speakers with >= 2 utterances")
    # unit-length inputs keep the loss scale independent of embedding norms
    x = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)
    rng = np.random.default_rng(seed)
    train_idx, val_idx = _split_validation(labels, cfg.val_fraction, rng)
    if len(np.unique(labels[val_idx])) < 2:
        val_idx = train_idx
    keep = [i for i in train_idx if np.sum(labels[train_idx] == labels[i]) >= 2]
    xt, yt = x[keep], labels[keep]
    xv, yv = x[val_idx], labels[val_idx]

    a = np.eye(x.shape[1])
    best_a, best_val = a.copy(), triplet_loss(a, xv, yv, cfg.margin)
    lr, vel = cfg.lr, np.zeros_like(a)
    if lr == 0:
        return CsmlModel(a, cfg.margin, seed)
    for epoch in range(cfg.epochs):
        for idx in _batches(yt, cfg, rng):
            _, grad = triplet_loss_grad(a, xt[idx], yt[idx], cfg.margin)
            vel = cfg.momentum * vel - lr * grad
            a = a + vel
        val = triplet_loss(a, xv, yv, cfg.margin)
        log.debug("csml epoch %d val loss %.5f lr %.4g", epoch, val, lr)
        if val < best_val:
            best_val, best_a = val, a.copy()
        else:
            lr *= cfg.lr_decay
    return CsmlModel(best_a, cfg.margin, seed)
