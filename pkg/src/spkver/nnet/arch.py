"""Declarative network descriptions and the named architecture presets.

Layer indices are 0-based positions in ``ArchSpec.layers``; ``skip_from``
refers to one of them. Frame-level layers come first, then exactly one
``stats_pooling``, then utterance-level dense layers and a training head.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, replace

FRAME_KINDS = ("tdnn", "ftdnn", "lstm_p", "mfm_tdnn_resblock")
VECTOR_KINDS = ("dense",)
HEAD_KINDS = ("softmax_head", "asoftmax_head")
KINDS = FRAME_KINDS + VECTOR_KINDS + HEAD_KINDS + ("stats_pooling",)


def _extent(ctx) -> int:
    return max(ctx) - min(ctx) if ctx else 0


@dataclass(frozen=True)
class LstmSpec:
    cell_dim: int = 512
    delay: int = -3
    recurrent_proj: int = 256
    nonrecurrent_proj: int = 256


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    size: int = 0
    context: tuple[int, ...] = (0,)
    context2: tuple[int, ...] | None = None  # second factor, ftdnn only
    inner_size: int | None = None
    skip_from: int | None = None
    activation: str = "relu"
    lstm: LstmSpec | None = None
    f: int = 1
    base: int = 64
    extended: bool = False
    margin: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if (self.inner_size is not None) != (self.kind == "ftdnn"):
            raise ValueError("inner_size is required for ftdnn layers and only for them")
        if self.kind == "ftdnn" and not self.context2:
            raise ValueError("ftdnn layers need context2")
        if self.kind == "lstm_p" and self.lstm is None:
            object.__setattr__(self, "lstm", LstmSpec())
        if self.activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "context", tuple(int(c) for c in self.context))
        if self.context2 is not None:
            object.__setattr__(self, "context2", tuple(int(c) for c in self.context2))

    @property
    def extent(self) -> int:
        """Frames consumed by the layer's temporal context."""
        if self.kind in ("tdnn", "lstm_p"):
            return _extent(self.context)
        if self.kind == "ftdnn":
            return _extent(self.context) + _extent(self.context2)
        return 0


@dataclass(frozen=True)
class ArchSpec:
    name: str
    layers: tuple[LayerSpec, ...]
    embedding_layer_index: int
    input_dim: int = 40
    num_speakers: int = 2
    postprocess: str = "cmn"  # "cmn" or "cmn+cmvn"

    def __post_init__(self):
        kinds = [layer.kind for layer in self.layers]
        if kinds.count("stats_pooling") != 1:
            raise ValueError(f"{self.name}: exactly one stats_pooling layer required")
        pool = kinds.index("stats_pooling")
        if any(k not in FRAME_KINDS for k in kinds[:pool]):
            raise ValueError(f"{self.name}: only frame-level layers may precede pooling")
        if any(k in FRAME_KINDS for k in kinds[pool + 1:]):
            raise ValueError(f"{self.name}: frame-level layer after pooling")
        if not pool < self.embedding_layer_index < len(self.layers):
            raise ValueError(f"{self.name}: embedding layer must come after pooling")
        if self.layers[self.embedding_layer_index].kind != "dense":
            raise ValueError(f"{self.name}: embedding layer must be dense")
        if kinds[-1] not in HEAD_KINDS or kinds.count(kinds[-1]) != 1:
            raise ValueError(f"{self.name}: last layer must be the single training head")
        for i, layer in enumerate(self.layers):
            if layer.skip_from is not None and not (0 <= layer.skip_from < i < pool):
                raise ValueError(f"{self.name}: layer {i} skip_from {layer.skip_from} must be an earlier frame-level layer")

    @property
    def pooling_index(self) -> int:
        return [layer.kind for layer in self.layers].index("stats_pooling")

    @property
    def frame_shrink(self) -> int:
        return sum(layer.extent for layer in self.layers[: self.pooling_index])

    @property
    def receptive_field(self) -> int:
        return self.frame_shrink + 1

    @property
    def embedding_dim(self) -> int:
        return self.layers[self.embedding_layer_index].size

    def with_speakers(self, n: int) -> "ArchSpec":
        return replace(self, num_speakers=int(n))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ArchSpec":
        d = json.loads(text)
        layers = []
        for ld in d.pop("layers"):
            if ld.get("lstm") is not None:
                ld["lstm"] = LstmSpec(**ld["lstm"])
            for key in ("context", "context2"):
                if ld.get(key) is not None:
                    ld[key] = tuple(ld[key])
            layers.append(LayerSpec(**ld))
        return cls(layers=tuple(layers), **d)


# ---------------------------------------------------------------------------
# presets


def _tdnn(size, context=(0,), **kw):
    return LayerSpec("tdnn", size, tuple(context), **kw)


def _utterance_tail(emb: int = 512, head: str = "softmax_head", second_dense: bool = True) -> list[LayerSpec]:
    tail = [LayerSpec("stats_pooling"), LayerSpec("dense", emb)]
    if second_dense:
        tail.append(LayerSpec("dense", emb))
    tail.append(LayerSpec(head))
    return tail


def _span(lo, hi):
    return tuple(range(lo, hi + 1))


def xvec_tdnn() -> list[LayerSpec]:
    return [
        _tdnn(512, _span(-2, 2)),
        _tdnn(512, (-2, 0, 2)),
        _tdnn(512, (-3, 0, 3)),
        _tdnn(512),
        _tdnn(1500),
    ]


def xvec_ext_tdnn() -> list[LayerSpec]:
    return [
        _tdnn(512, _span(-2, 2)),
        _tdnn(512),
        _tdnn(512, (-2, 0, 2)),
        _tdnn(512),
        _tdnn(512, (-3, 0, 3)),
        _tdnn(512),
        _tdnn(512, (-4, 0, 4)),
        _tdnn(512),
        _tdnn(512),
        _tdnn(1500),
    ]


def _lstm(context=(0,)):
    return LayerSpec("lstm_p", 512, tuple(context), lstm=LstmSpec(512, -3, 256, 256))


def xvec_ftdnn() -> list[LayerSpec]:
    """Factorised TDNN with skip connections (table rows 1-10, 1-based skips)."""
    rows = [
        # (context factor 1, context factor 2, skip from row)
        ((-2, 0), (2, 0), None),
        ((0,), (0,), None),
        ((-3, 0), (-3, 0), None),
        ((0,), (0,), 3),
        ((-3, 0), (3, 0), None),
        ((0,), (0,), 5),
        ((-3, 0), (3, 0), 4),
        ((0,), (0,), None),
    ]
    layers = [_tdnn(512, _span(-2, 2))]
    for c1, c2, skip in rows:
        layers.append(
            LayerSpec("ftdnn", 512, c1, context2=c2, inner_size=256, skip_from=None if skip is None else skip - 1)
        )
    layers.append(_tdnn(1536))
    return layers


def _resnet(blocks: int, f: int, extended: bool, dim: int = 256, base: int = 64) -> list[LayerSpec]:
    layers = [_tdnn(dim, _span(-2, 2))]
    layers += [LayerSpec("mfm_tdnn_resblock", dim, f=f, base=base, extended=extended) for _ in range(blocks)]
    layers.append(_tdnn(1536))
    return layers


def _xvec(name, frames, postprocess="cmn", input_dim=40):
    layers = frames + _utterance_tail()
    return ArchSpec(name, tuple(layers), len(frames) + 1, input_dim=input_dim, postprocess=postprocess)


def _cvec(name, frames):
    layers = frames + _utterance_tail(head="asoftmax_head", second_dense=False)
    return ArchSpec(name, tuple(layers), len(frames) + 1, postprocess="cmn+cmvn")


def _replace_layer(layers, index, new):
    layers = list(layers)
    layers[index] = new
    return layers


PRESETS: dict[str, ArchSpec] = {
    "Xvec-TDNN": _xvec("Xvec-TDNN", xvec_tdnn()),
    "Xvec-TDNN-LSTM": _xvec("Xvec-TDNN-LSTM", _replace_layer(xvec_tdnn(), 3, _lstm())),
    "Xvec-Ext-TDNN": _xvec("Xvec-Ext-TDNN", xvec_ext_tdnn()),
    "Xvec-Ext-TDNN-LSTM": _xvec("Xvec-Ext-TDNN-LSTM", _replace_layer(xvec_ext_tdnn(), 8, _lstm((-3, 0)))),
    "Xvec-FTDNN": _xvec("Xvec-FTDNN", xvec_ftdnn()),
    "Xvec-TDNN-8k": _xvec("Xvec-TDNN-8k", xvec_tdnn(), postprocess="cmn+cmvn", input_dim=23),
    "Cvec-ResTDNN": _cvec("Cvec-ResTDNN", _resnet(20, 2, extended=False)),
    "Cvec-ExtResTDNN": _cvec("Cvec-ExtResTDNN", _resnet(20, 2, extended=True)),
    "Cvec-ExtResTDNN-26": _cvec("Cvec-ExtResTDNN-26", _resnet(26, 2, extended=True)),
    "Cvec-Wide-ResTDNN": _cvec("Cvec-Wide-ResTDNN", _resnet(20, 4, extended=True)),
    "Cvec-Wide-ExtResTDNN": _cvec("Cvec-Wide-ExtResTDNN", _resnet(24, 5, extended=True)),
}

# system names as they appear in the experiment descriptions -> preset
SYSTEMS: dict[str, str] = {
    "Xvec-TDNN-V1": "Xvec-TDNN",
    "Xvec-TDNN-V2": "Xvec-TDNN",
    "Xvec-TDNN-V3": "Xvec-TDNN",
    "Xvec-TDNN-LSTM-V1": "Xvec-TDNN-LSTM",
    "Xvec-TDNN-LSTM-V3": "Xvec-TDNN-LSTM",
    "Xvec-Ext-TDNN-V1": "Xvec-Ext-TDNN",
    "Xvec-Ext-V3": "Xvec-Ext-TDNN",
    "Xvec-Ext-TDNN-V3": "Xvec-Ext-TDNN",
    "Xvect-Ext-TDNN-LSTM-V3": "Xvec-Ext-TDNN-LSTM",
    "Xvect-FTDNN-V2": "Xvec-FTDNN",
    "Xvec-TDNN-V4": "Xvec-TDNN-8k",
    "Xvec-TDNN-V4-WPE": "Xvec-TDNN-8k",
    "Cvec-ResTDNN-V1": "Cvec-ResTDNN",
    "Cvec-ResTDNN-V4": "Cvec-ResTDNN",
    "Cvec-ResTDNN-V1-WPE": "Cvec-ResTDNN",
    "Cvec-ResTDNN-V4-WPE": "Cvec-ResTDNN",
    "Cvec-ExtResTDNN-V1": "Cvec-ExtResTDNN",
    "Cvec-ExtResTDNN-V1-V2": "Cvec-ExtResTDNN",
    "Cvec-ExtResTDNN-V2": "Cvec-ExtResTDNN-26",
    "Cvec-Wide-ResTDNN-V2": "Cvec-Wide-ResTDNN",
    "Cvec-Wide-ExtResTDNN-V2": "Cvec-Wide-ExtResTDNN",
}


def mini(arch: ArchSpec, scale: int = 4, max_blocks: int = 4, embedding_dim: int = 128) -> ArchSpec:
    """Desk-scale variant: widths divided by ``scale``, at most ``max_blocks`` residual blocks."""
    layers, blocks, remap = [], 0, {}
    pool = arch.pooling_index
    for i, layer in enumerate(arch.layers):
        if layer.kind == "mfm_tdnn_resblock":
            blocks += 1
            if blocks > max_blocks:
                continue
        remap[i] = len(layers)
        changes = {}
        if i < pool and layer.size:
            changes["size"] = max(8, layer.size // scale)
        elif layer.kind == "dense":
            changes["size"] = embedding_dim
        if layer.inner_size:
            changes["inner_size"] = max(4, layer.inner_size // scale)
        if layer.kind == "mfm_tdnn_resblock":
            changes["base"] = max(2, layer.base // scale)
        if layer.lstm is not None:
            lstm = layer.lstm
            changes["lstm"] = LstmSpec(
                max(4, lstm.cell_dim // scale), lstm.delay, max(2, lstm.recurrent_proj // scale), max(2, lstm.nonrecurrent_proj // scale)
            )
            changes["size"] = changes["lstm"].recurrent_proj + changes["lstm"].nonrecurrent_proj
        layers.append(replace(layer, **changes))
    layers = [replace(layer, skip_from=remap[layer.skip_from]) if layer.skip_from is not None else layer for layer in layers]
    return replace(arch, name=f"{arch.name}-mini", layers=tuple(layers), embedding_layer_index=remap[arch.embedding_layer_index])


def get_arch(name: str, num_speakers: int | None = None, input_dim: int | None = None) -> ArchSpec:
    """Look up a preset by preset name, system name, or ``<name>-mini``."""
    base_name = re.sub(r"-mini$", "", name)
    base_name = SYSTEMS.get(base_name, base_name)
    if base_name not in PRESETS:
        known = ", ".join(sorted(PRESETS) + sorted(SYSTEMS))
        raise KeyError(f"unknown architecture {name!r}; known: {known}")
    arch = PRESETS[base_name]
    if name.endswith("-mini"):
        arch = mini(arch)
    if num_speakers is not None:
        arch = arch.with_speakers(num_speakers)
    if input_dim is not None:
        arch = replace(arch, input_dim=int(input_dim))
    return arch
