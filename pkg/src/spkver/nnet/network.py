"""A network assembled from an ArchSpec, with skip concatenation and checkpoints."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..corpus import ContainerError
from .arch import ArchSpec
from .layers import build_layer, output_dim

CHECKPOINT_MAGIC = b"SVNN"
CHECKPOINT_VERSION = 1


def center_crop(x: np.ndarray, frames: int) -> np.ndarray:
    """Crop the frame axis to ``frames``; an odd excess drops the extra frame at the end."""
    excess = x.shape[1] - frames
    if excess < 0:
        raise ValueError(f"cannot crop {x.shape[1]} frames to {frames}")
    start = excess // 2
    return x[:, start : start + frames]


class Network:
    def __init__(self, arch: ArchSpec, seed: int = 0, dtype=np.float32):
        self.arch = arch
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.layers = []
        dims = []
        dim = arch.input_dim
        for spec in arch.layers:
            in_dim = dim + (dims[spec.skip_from] if spec.skip_from is not None else 0)
            self.layers.append(build_layer(spec, in_dim, arch.num_speakers, rng, self.dtype))
            dim = output_dim(spec, in_dim)
            dims.append(dim)
        self.dims = dims

    @property
    def head(self):
        return self.layers[-1]

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                yield f"{i}.{name}", layer, name, value

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def check_frames(self, frames: int):
        if frames < self.arch.receptive_field:
            raise ValueError(f"{frames} frames is shorter than the receptive field of {self.arch.receptive_field}")

    def _forward_to(self, x: np.ndarray, stop: int) -> np.ndarray:
        """Run layers ``[0, stop)``; x is (batch, frames, dim) or (frames, dim)."""
        if x.ndim == 2:
            x = x[None]
        if x.shape[-1] != self.arch.input_dim:
            raise ValueError(f"expected {self.arch.input_dim}-dim features, got {x.shape[-1]}")
        self.check_frames(x.shape[1])
        x = x.astype(self.dtype, copy=False)
        outs = []
        self._skip_meta = {}
        for i, (spec, layer) in enumerate(zip(self.arch.layers[:stop], self.layers[:stop])):
            if spec.skip_from is not None:
                src = outs[spec.skip_from]
                self._skip_meta[i] = (x.shape[-1], src.shape[1])
                x = np.concatenate([x, center_crop(src, x.shape[1])], axis=2)
            x = layer.forward(x)
            outs.append(x)
        return x

    def forward(self, x: np.ndarray, labels) -> float:
        """Training forward pass; returns the head loss."""
        h = self._forward_to(x, len(self.layers) - 1)
        return self.head.forward(h, labels)

    def backward(self):
        """Backpropagate from the head; returns the gradient with respect to the input."""
        pool = self.arch.pooling_index
        skip_grads: dict[int, np.ndarray] = {}
        g = self.head.backward()
        for i in range(len(self.layers) - 2, -1, -1):
            if i in skip_grads:
                g = g + skip_grads.pop(i)
            g = self.layers[i].backward(g)
            spec = self.arch.layers[i]
            if spec.skip_from is not None and i < pool:
                own, src_frames = self._skip_meta[i]
                g, g_skip = g[..., :own], g[..., own:]
                full = np.zeros((g_skip.shape[0], src_frames, g_skip.shape[2]), g_skip.dtype)
                start = (src_frames - g_skip.shape[1]) // 2
                full[:, start : start + g_skip.shape[1]] = g_skip
                skip_grads[spec.skip_from] = skip_grads.get(spec.skip_from, 0) + full
        return g

    def embed(self, feats: np.ndarray) -> np.ndarray:
        """Embedding: pre-activation of the designated dense layer, one row per batch item."""
        self._forward_to(feats, self.arch.embedding_layer_index + 1)
        z = self.layers[self.arch.embedding_layer_index].pre_activation
        return z[0] if feats.ndim == 2 else z

    def predict(self, feats: np.ndarray) -> np.ndarray:
        h = self._forward_to(feats, len(self.layers) - 1)
        return self.head.logits(h).argmax(axis=1)

    # checkpoints

    def save(self, path) -> None:
        arch_json = self.arch.to_json().encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<IQI", CHECKPOINT_VERSION, self.seed, len(arch_json)))
            fh.write(arch_json)
            for _, _, _, value in self.named_params():
                fh.write(np.ascontiguousarray(value, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "Network":
        data = Path(path).read_bytes()
        if data[:4] != CHECKPOINT_MAGIC:
            raise ContainerError(f"{path}: not a network checkpoint")
        try:
            version, seed, n = struct.unpack_from("<IQI", data, 4)
        except struct.error as exc:
            raise ContainerError(f"{path}: truncated header") from exc
        if version != CHECKPOINT_VERSION:
            raise ContainerError(f"{path}: unsupported checkpoint version {version}")
        offset = 4 + struct.calcsize("<IQI")
        arch = ArchSpec.from_json(data[offset : offset + n].decode("utf-8"))
        offset += n
        net = cls(arch, seed=seed)
        for key, layer, name, value in net.named_params():
            size = value.size * 4
            if offset + size > len(data):
                raise ContainerError(f"{path}: truncated at tensor {key}")
            layer.params[name] = np.frombuffer(data, "<f4", value.size, offset).reshape(value.shape).astype(net.dtype)
            offset += size
        if offset != len(data):
            raise ContainerError(f"{path}: {len(data) - offset} trailing bytes")
        return net
