"""Interchange types and file formats shared by every stage.

Audio is read and written as PCM WAV through the stdlib ``wave`` module.
Manifests are JSON-lines, trial/key/score files are whitespace-separated
text, and embeddings (plus RIR caches) live in a small little-endian binary
container::

    magic[4] | u32 version | u32 dim | u32 count | count x (u16 len | id | dim x f32)
"""

from __future__ import annotations

import json
import struct
import wave
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
from scipy import signal

PathLike = str | Path


class AudioFormatError(ValueError):
    """Audio file that is not readable PCM WAV."""


class EmptyAudioError(ValueError):
    """Audio file that decodes to zero samples."""


class ManifestError(ValueError):
    pass


class TrialFileError(ValueError):
    pass


class ContainerError(ValueError):
    """Bad magic, version or layout in a binary vector container."""


# ---------------------------------------------------------------------------
# audio


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioBuffer holds mono audio; samples must be 1-D")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_seconds(self) -> float:
        return len(self) / self.sample_rate


_PCM_SCALE = {1: 128.0, 2: 32768.0, 3: 8388608.0, 4: 2147483648.0}


def read_wav(path: PathLike) -> AudioBuffer:
    """Read a PCM WAV file, scaled to [-1, 1] and averaged down to mono."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such audio file: {path}")
    try:
        with wave.open(str(path), "rb") as w:
            n_channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise AudioFormatError(f"{path}: not a PCM WAV file ({exc})") from exc
    except EOFError as exc:
        raise AudioFormatError(f"{path}: truncated WAV header") from exc
    if width not in _PCM_SCALE:
        raise AudioFormatError(f"{path}: unsupported sample width {width} bytes")
    if len(raw) == 0:
        raise EmptyAudioError(f"{path}: zero-length audio")

    if width == 1:
        ints = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0
    elif width == 3:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        ints = np.where(v >= 1 << 23, v - (1 << 24), v).astype(np.float64)
    else:
        ints = np.frombuffer(raw, dtype=f"<i{width}").astype(np.float64)
    samples = ints / _PCM_SCALE[width]
    if n_channels > 1:
        samples = samples.reshape(-1, n_channels).mean(axis=1)
    return AudioBuffer(samples, rate)


def write_wav(path: PathLike, buf: AudioBuffer) -> None:
    """Write 16-bit mono PCM. Samples outside [-1, 1) are clipped."""
    ints = np.clip(np.round(buf.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(buf.sample_rate)
        w.writeframes(ints.tobytes())


def resample(buf: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Polyphase resampling with a Kaiser anti-alias filter.

    Output length is ``ceil(N * target_rate / sample_rate)``; the filter cutoff
    sits at the lower of the two Nyquist frequencies.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == buf.sample_rate:
        return buf
    ratio = Fraction(int(target_rate), buf.sample_rate)
    out = signal.resample_poly(buf.samples, ratio.numerator, ratio.denominator)
    return AudioBuffer(out, target_rate)


# ---------------------------------------------------------------------------
# manifests


@dataclass
class UtteranceRecord:
    utt_id: str
    speaker_id: str
    path: str
    sample_rate: int
    speech_seconds: float | None = None
    augmentation_tag: str = "clean"
    # provenance of augmented copies (source utterance, room and RIR ids, SNR)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.speech_seconds is not None and self.speech_seconds < 0:
            raise ValueError(f"{self.utt_id}: speech_seconds must be >= 0")

    def to_json(self) -> dict:
        d = asdict(self)
        if d["speech_seconds"] is None:
            del d["speech_seconds"]
        if not d["meta"]:
            del d["meta"]
        return d


_REQUIRED = ("utt_id", "speaker_id", "path", "sample_rate")


def load_manifest(path: PathLike) -> list[UtteranceRecord]:
    records: list[UtteranceRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(d, dict):
                raise ManifestError(f"{path}:{lineno}: expected a JSON object")
            missing = [k for k in _REQUIRED if k not in d]
            if missing:
                raise ManifestError(f"{path}:{lineno}: missing field(s) {', '.join(missing)}")
            try:
                rec = UtteranceRecord(
                    utt_id=str(d["utt_id"]),
                    speaker_id=str(d["speaker_id"]),
                    path=str(d["path"]),
                    sample_rate=int(d["sample_rate"]),
                    speech_seconds=None if d.get("speech_seconds") is None else float(d["speech_seconds"]),
                    augmentation_tag=str(d.get("augmentation_tag", "clean")),
                    meta=dict(d.get("meta", {})),
                )
            except (TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
            if rec.utt_id in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate utt_id {rec.utt_id!r}")
            seen.add(rec.utt_id)
            records.append(rec)
    return records


def save_manifest(path: PathLike, records: Iterable[UtteranceRecord]) -> None:
    seen: set[str] = set()
    lines = []
    for rec in records:
        if rec.utt_id in seen:
            raise ManifestError(f"duplicate utt_id {rec.utt_id!r}")
        seen.add(rec.utt_id)
        lines.append(json.dumps(rec.to_json(), sort_keys=True))
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# ---------------------------------------------------------------------------
# trials, keys, scores

TARGET, NONTARGET = "tgt", "imp"


@dataclass(frozen=True)
class TrialList:
    trials: tuple[tuple[str, str], ...]
    key: tuple[bool, ...] | None = None

    def __post_init__(self):
        trials = tuple((str(m), str(t)) for m, t in self.trials)
        if len(set(trials)) != len(trials):
            raise TrialFileError("duplicate (model_id, test_id) pair in trial list")
        object.__setattr__(self, "trials", trials)
        if self.key is not None:
            key = tuple(bool(k) for k in self.key)
            if len(key) != len(trials):
                raise TrialFileError("key does not cover the trial list")
            object.__setattr__(self, "key", key)

    def __len__(self) -> int:
        return len(self.trials)

    @property
    def labels(self) -> np.ndarray:
        if self.key is None:
            raise TrialFileError("trial list has no key")
        return np.array(self.key, dtype=bool)

    def subset(self, index: Sequence[int]) -> "TrialList":
        index = list(index)
        key = None if self.key is None else tuple(self.key[i] for i in index)
        return TrialList(tuple(self.trials[i] for i in index), key)

    def model_ids(self) -> list[str]:
        return sorted({m for m, _ in self.trials})

    def test_ids(self) -> list[str]:
        return sorted({t for _, t in self.trials})


SCORE_STAGES = ("raw", "snorm", "fused", "llr")


@dataclass(frozen=True)
class ScoreSet:
    trials: tuple[tuple[str, str], ...]
    scores: np.ndarray
    stage: str = "raw"

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if scores.shape[0] != len(self.trials):
            raise ValueError("one score per trial required")
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite")
        if self.stage not in SCORE_STAGES:
            raise ValueError(f"unknown score stage {self.stage!r}")
        scores.setflags(write=False)
        object.__setattr__(self, "trials", tuple(self.trials))
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return len(self.trials)

    def with_scores(self, scores: np.ndarray, stage: str | None = None) -> "ScoreSet":
        return ScoreSet(self.trials, scores, stage or self.stage)

    def aligned_to(self, trials: TrialList) -> "ScoreSet":
        """Reorder to follow ``trials``; every trial must be present."""
        if tuple(trials.trials) == self.trials:
            return self
        lookup = {t: i for i, t in enumerate(self.trials)}
        try:
            idx = [lookup[t] for t in trials.trials]
        except KeyError as exc:
            raise TrialFileError(f"trial {exc.args[0]} has no score") from None
        return ScoreSet(trials.trials, self.scores[idx], self.stage)


def _read_columns(path: PathLike, ncols: int) -> Iterator[tuple[int, list[str]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != ncols:
                raise TrialFileError(f"{path}:{lineno}: expected {ncols} columns, got {len(parts)}")
            yield lineno, parts


def load_trials(path: PathLike) -> TrialList:
    """Read a trial list (2 columns) or a key (3 columns, tgt|imp)."""
    with open(path, encoding="utf-8") as fh:
        first = next((line.split() for line in fh if line.strip()), [])
    if len(first) == 3:
        return load_key(path)
    return TrialList(tuple((m, t) for _, (m, t) in _read_columns(path, 2)))


def load_key(path: PathLike) -> TrialList:
    trials, key = [], []
    for lineno, (m, t, lab) in _read_columns(path, 3):
        if lab not in (TARGET, NONTARGET):
            raise TrialFileError(f"{path}:{lineno}: label must be {TARGET} or {NONTARGET}, got {lab!r}")
        trials.append((m, t))
        key.append(lab == TARGET)
    return TrialList(tuple(trials), tuple(key))


def save_trials(path: PathLike, trials: TrialList) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if trials.key is None:
            for m, t in trials.trials:
                fh.write(f"{m} {t}\n")
        else:
            for (m, t), k in zip(trials.trials, trials.key):
                fh.write(f"{m} {t} {TARGET if k else NONTARGET}\n")


def load_scores(path: PathLike, stage: str = "raw") -> ScoreSet:
    trials, scores = [], []
    for lineno, (m, t, s) in _read_columns(path, 3):
        try:
            scores.append(float(s))
        except ValueError:
            raise TrialFileError(f"{path}:{lineno}: bad score {s!r}") from None
        trials.append((m, t))
    return ScoreSet(tuple(trials), np.array(scores), stage)


def save_scores(path: PathLike, scores: ScoreSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (m, t), s in zip(scores.trials, scores.scores):
            fh.write(f"{m} {t} {s:.6f}\n")


# ---------------------------------------------------------------------------
# embeddings and other id -> vector containers


class EmbeddingSet(Mapping[str, np.ndarray]):
    """Ordered id -> float32 vector map with a fixed dimension."""

    def __init__(self, dim: int, entries: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]] = ()):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = int(dim)
        self._entries: dict[str, np.ndarray] = {}
        items = entries.items() if isinstance(entries, Mapping) else entries
        for key, vec in items:
            self._add(key, vec)

    def _add(self, key: str, vec) -> None:
        v = np.asarray(vec, dtype=np.float32).reshape(-1)
        if v.shape[0] != self.dim:
            raise ValueError(f"{key}: expected dim {self.dim}, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"{key}: non-finite embedding")
        if not np.any(v):
            raise ValueError(f"{key}: zero-norm embedding")
        v.setflags(write=False)
        self._entries[str(key)] = v

    def __getitem__(self, key: str) -> np.ndarray:
        return self._entries[key]

    def __iter__(self):
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def matrix(self, ids: Sequence[str] | None = None) -> np.ndarray:
        ids = list(self._entries) if ids is None else ids
        if not ids:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack([self._entries[i] for i in ids])


def _write_container(path: PathLike, magic: bytes, dim: int, items: Sequence[tuple[str, np.ndarray]]) -> None:
    parts = [magic, struct.pack("<III", 1, dim, len(items))]
    for key, vec in items:
        raw_id = key.encode("utf-8")
        if len(raw_id) > 0xFFFF:
            raise ValueError(f"id too long: {key[:40]}...")
        v = np.asarray(vec, dtype="<f4").reshape(-1)
        if v.shape[0] != dim:
            raise ValueError(f"{key}: dim mismatch ({v.shape[0]} != {dim})")
        parts.append(struct.pack("<H", len(raw_id)))
        parts.append(raw_id)
        parts.append(v.tobytes())
    Path(path).write_bytes(b"".join(parts))


def _read_container(path: PathLike, magic: bytes) -> tuple[int, list[tuple[str, np.ndarray]]]:
    data = Path(path).read_bytes()
    if data[:4] != magic:
        raise ContainerError(f"{path}: bad magic {data[:4]!r}, expected {magic!r}")
    if len(data) < 16:
        raise ContainerError(f"{path}: truncated header")
    version, dim, count = struct.unpack_from("<III", data, 4)
    if version != 1:
        raise ContainerError(f"{path}: unsupported version {version}")
    pos, items = 16, []
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            key = data[pos:pos + n].decode("utf-8")
            pos += n
            vec = np.frombuffer(data, dtype="<f4", count=dim, offset=pos).astype(np.float32)
            pos += 4 * dim
            items.append((key, vec))
    except (struct.error, ValueError) as exc:
        raise ContainerError(f"{path}: truncated or corrupt ({exc})") from None
    if pos != len(data):
        raise ContainerError(f"{path}: {len(data) - pos} trailing bytes")
    return dim, items


def save_embeddings(path: PathLike, embeddings: EmbeddingSet) -> None:
    _write_container(path, b"SVEB", embeddings.dim, list(embeddings.items()))


def load_embeddings(path: PathLike) -> EmbeddingSet:
    dim, items = _read_container(path, b"SVEB")
    return EmbeddingSet(dim, items)


def save_vectors(path: PathLike, magic: bytes, vectors: Mapping[str, np.ndarray]) -> None:
    """Generic container for equal-length vectors (used for RIR caches)."""
    items = list(vectors.items())
    dim = len(items[0][1]) if items else 1
    _write_container(path, magic, dim, items)


def load_vectors(path: PathLike, magic: bytes) -> dict[str, np.ndarray]:
    return dict(_read_container(path, magic)[1])


def save_matrices(path: PathLike, matrices: Mapping[str, np.ndarray]) -> None:
    """Variable-size float32 matrices by id, written in insertion order."""
    parts = [b"SVFM", struct.pack("<II", 1, len(matrices))]
    for key, mat in matrices.items():
        raw_id = key.encode("utf-8")
        m = np.asarray(mat, dtype="<f4")
        if m.ndim != 2:
            raise ValueError(f"{key}: expected a 2-D matrix, got shape {m.shape}")
        parts.append(struct.pack("<HII", len(raw_id), *m.shape))
        parts.append(raw_id)
        parts.append(np.ascontiguousarray(m).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_matrices(path: PathLike) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != b"SVFM":
        raise ContainerError(f"{path}: bad magic {data[:4]!r}, expected b'SVFM'")
    try:
        version, count = struct.unpack_from("<II", data, 4)
        if version != 1:
            raise ContainerError(f"{path}: unsupported version {version}")
        pos, out = 12, {}
        for _ in range(count):
            n, rows, cols = struct.unpack_from("<HII", data, pos)
            pos += 10
            key = data[pos:pos + n].decode("utf-8")
            pos += n
            out[key] = np.frombuffer(data, "<f4", rows * cols, pos).reshape(rows, cols).astype(np.float32)
            pos += 4 * rows * cols
    except (struct.error, ValueError) as exc:
        if isinstance(exc, ContainerError):
            raise
        raise ContainerError(f"{path}: truncated or corrupt ({exc})") from None
    if pos != len(data):
        raise ContainerError(f"{path}: {len(data) - pos} trailing bytes")
    return out
