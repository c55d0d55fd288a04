"""Mini-batch training of embedding extractors and embedding extraction."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from ..corpus import EmbeddingSet
from .arch import ArchSpec
from .layers import FtdnnLayer
from .network import Network

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    objective: str | None = None  # softmax_ce | asoftmax; None keeps the preset head
    asoftmax_margin: int = 2
    epochs: int = 10
    batch_size: int = 16
    chunk_min: int = 200
    chunk_max: int = 400
    lr: float = 0.01
    lr_final: float = 0.001
    momentum: float = 0.9
    max_grad_norm: float = 5.0
    semi_orthogonal_interval: int = 4  # steps; 0 disables
    # softmax-to-margin annealing: lam = max(lam_min, lam_base / (1 + lam_gamma * step))
    lam_base: float = 100.0
    lam_gamma: float = 0.1
    lam_min: float = 2.0

    def __post_init__(self):
        if self.objective not in (None, "softmax_ce", "asoftmax"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if int(self.asoftmax_margin) != self.asoftmax_margin or self.asoftmax_margin < 1:
            raise ValueError("asoftmax_margin must be an integer >= 1")
        if not 1 <= self.chunk_min <= self.chunk_max:
            raise ValueError("need 1 <= chunk_min <= chunk_max")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


def configure_arch(arch: ArchSpec, cfg: TrainConfig, num_speakers: int) -> ArchSpec:
    """Apply the objective and margin from ``cfg`` to the head of ``arch``."""
    head = arch.layers[-1]
    kind = {"softmax_ce": "softmax_head", "asoftmax": "asoftmax_head", None: head.kind}[cfg.objective]
    head = replace(head, kind=kind, margin=int(cfg.asoftmax_margin))
    return replace(arch, layers=arch.layers[:-1] + (head,), num_speakers=int(num_speakers))


def frobenius_orth_error(m: np.ndarray) -> float:
    m = np.asarray(m, dtype=np.float64)
    if m.shape[0] < m.shape[1]:
        m = m.T
    return float(np.linalg.norm(m.T @ m - np.eye(m.shape[1])))


def semi_orthogonal_step(m: np.ndarray) -> np.ndarray:
    """One re-projection of ``m`` towards ``m.T @ m = I`` (the transpose when rows < cols).

    First the scale minimising ``||s^2 P - I||`` is applied (P = m.T m), then a
    Newton-Schulz step ``m <- m - nu m (P - I)`` with ``nu = 1/2``, halved while
    it fails to reduce the error. The result never has a larger error.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape[0] < m.shape[1]:
        return semi_orthogonal_step(m.T).T
    p = m.T @ m
    tr_p2 = float(np.sum(p * p))
    if tr_p2 > 0:
        m = m * np.sqrt(np.trace(p) / tr_p2)
    eye = np.eye(m.shape[1])
    base = frobenius_orth_error(m)
    direction = m @ (m.T @ m - eye)
    nu = 0.5
    for _ in range(30):
        cand = m - nu * direction
        err = frobenius_orth_error(cand)
        if err < base:
            return cand
        nu *= 0.5
    return m


def _lr_at(cfg: TrainConfig, step: int, total: int) -> float:
    if total <= 1 or cfg.lr_final <= 0:
        return cfg.lr
    return cfg.lr * (cfg.lr_final / cfg.lr) ** (step / (total - 1))


def _batches(rng, feats, labels, cfg, min_frames):
    order = rng.permutation(len(feats))
    for lo in range(0, len(order), cfg.batch_size):
        idx = order[lo : lo + cfg.batch_size]
        shortest = min(feats[i].shape[0] for i in idx)
        length = int(rng.integers(cfg.chunk_min, cfg.chunk_max + 1))
        length = max(min_frames, min(length, shortest))
        chunks = []
        for i in idx:
            start = int(rng.integers(0, feats[i].shape[0] - length + 1))
            chunks.append(feats[i][start : start + length])
        yield np.stack(chunks), labels[idx]


def train_extractor(
    arch: ArchSpec,
    feats: Sequence[np.ndarray],
    labels: Sequence[int],
    cfg: TrainConfig = TrainConfig(),
    seed: int = 0,
) -> tuple[Network, list[dict]]:
    """Train a network on ``(frames, dim)`` feature matrices with integer speaker labels.

    Returns the trained network and a per-epoch log of mean loss, accuracy and
    learning rate. A non-finite loss raises TrainingDivergedError.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(feats) != len(labels):
        raise ValueError("feats and labels differ in length")
    n_spk = int(labels.max()) + 1 if labels.size else 0
    if len(np.unique(labels)) < 2:
        raise ValueError("training needs at least two speakers")
    arch = configure_arch(arch, cfg, n_spk)
    min_frames = arch.receptive_field
    keep = [i for i, f in enumerate(feats) if f.shape[0] >= min_frames]
    if len(keep) < len(feats):
        log.warning("dropping %d examples shorter than %d frames", len(feats) - len(keep), min_frames)
    feats = [np.asarray(feats[i], dtype=np.float32) for i in keep]
    labels = labels[keep]
    if len(np.unique(labels)) < 2:
        raise ValueError("fewer than two speakers left after dropping short examples")

    net = Network(arch, seed=seed)
    rng = np.random.default_rng(seed)
    velocity = {key: np.zeros_like(v) for key, _, _, v in net.named_params()}
    steps_per_epoch = -(-len(feats) // cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    ftdnn = [layer for layer in net.layers if isinstance(layer, FtdnnLayer)]
    history, step = [], 0
    for epoch in range(cfg.epochs):
        losses, correct, seen = [], 0, 0
        for x, y in _batches(rng, feats, labels, cfg, min_frames):
            lr = _lr_at(cfg, step, total)
            if hasattr(net.head, "lam"):
                net.head.lam = max(cfg.lam_min, cfg.lam_base / (1.0 + cfg.lam_gamma * step))
            net.zero_grad()
            loss = net.forward(x, y)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} step {step} (lr {lr:.3g}); lower the learning rate"
                )
            net.backward()
            grads = [(key, layer, name) for key, layer, name, _ in net.named_params()]
            norm = np.sqrt(sum(float(np.sum(layer.grads[name].astype(np.float64) ** 2)) for _, layer, name in grads))
            clip = min(1.0, cfg.max_grad_norm / norm) if norm > 0 and cfg.max_grad_norm else 1.0
            for key, layer, name in grads:
                v = velocity[key]
                v *= cfg.momentum
                v -= (lr * clip) * layer.grads[name]
                layer.params[name] += v
            step += 1
            if cfg.semi_orthogonal_interval and step % cfg.semi_orthogonal_interval == 0:
                for layer in ftdnn:
                    layer.params["W1"] = semi_orthogonal_step(layer.params["W1"]).astype(net.dtype)
            losses.append(loss)
            correct += int(np.sum(net.head.last_logits.argmax(axis=1) == y))
            seen += len(y)
        entry = {"epoch": epoch, "loss": float(np.mean(losses)), "accuracy": correct / max(seen, 1), "lr": lr}
        log.info("epoch %d loss %.4f acc %.3f", epoch, entry["loss"], entry["accuracy"])
        history.append(entry)
    return net, history


def training_accuracy(net: Network, feats: Sequence[np.ndarray], labels: Sequence[int]) -> float:
    """Fraction of whole utterances whose predicted class matches the label."""
    hits = [int(net.predict(f)[0] == y) for f, y in zip(feats, labels)]
    return float(np.mean(hits)) if hits else 0.0


def extract_embeddings(net: Network, feats: Mapping[str, np.ndarray], max_frames: int | None = None) -> EmbeddingSet:
    """Embed each utterance over its full length, or its first ``max_frames`` frames."""
    out = EmbeddingSet(net.arch.embedding_dim)
    for utt, f in feats.items():
        f = np.asarray(f)
        if max_frames:
            f = f[:max_frames]
        out._add(utt, net.embed(f))
    return out
