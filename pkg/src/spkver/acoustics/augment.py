from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from ..corpus import AudioBuffer, UtteranceRecord
from ..seeding import derive_seed
from .rir import RoomSpec, Rir, generate_rir, reverberate_with_scale


@dataclass(frozen=True)
class RoomRanges:
    length_width: tuple[float, float] = (3.0, 10.0)
    height: tuple[float, float] = (2.5, 4.0)
    reflectivity: tuple[float, float] = (0.2, 0.95)
    min_distance: float = 0.5
    wall_clearance: float = 0.3


@dataclass(frozen=True)
class RoomSetup:
    room: RoomSpec
    placements: tuple[tuple[np.ndarray, np.ndarray], ...]
    room_id: int = 0

    def rir_id(self, position: int) -> str:
        return f"room{self.room_id:05d}-pos{position}"


def sample_room_setup(
    rng_seed: int,
    n_positions: int = 4,
    ranges: RoomRanges = RoomRanges(),
    sample_rate: int = 16000,
    room_id: int = 0,
) -> RoomSetup:
    rng = np.random.default_rng(rng_seed)
    lx, ly = rng.uniform(*ranges.length_width, size=2)
    lz = rng.uniform(*ranges.height)
    beta = rng.uniform(*ranges.reflectivity, size=6)
    dims = np.array([lx, ly, lz])
    lo, hi = np.full(3, ranges.wall_clearance), dims - ranges.wall_clearance
    placements = []
    while len(placements) < n_positions:
        src, mic = rng.uniform(lo, hi), rng.uniform(lo, hi)
        if np.linalg.norm(src - mic) >= ranges.min_distance:
            placements.append((src, mic))
    room = RoomSpec(tuple(dims), tuple(beta), sample_rate=sample_rate)
    return RoomSetup(room, tuple(placements), room_id)


def mix_at_snr(
    speech: AudioBuffer,
    noise: AudioBuffer,
    snr_db: float,
    speech_mask: np.ndarray | None = None,
) -> AudioBuffer:
    """Add noise scaled to ``snr_db`` relative to the speech.

    Noise is looped or truncated to the speech length. Energies are measured
    over ``speech_mask`` (per-sample booleans) when given, else everywhere.
    """
    if speech.sample_rate != noise.sample_rate:
        raise ValueError("speech and noise sample rates differ")
    if len(noise) == 0:
        raise ValueError("noise has zero energy")
    n = np.resize(noise.samples, len(speech))
    region = slice(None) if speech_mask is None else np.asarray(speech_mask, dtype=bool)
    e_speech = np.mean(speech.samples[region] ** 2)
    e_noise = np.mean(n[region] ** 2)
    if e_speech <= 0:
        raise ValueError("speech has zero energy")
    if e_noise <= 0:
        raise ValueError("noise has zero energy")
    gain = np.sqrt(e_speech / (e_noise * 10 ** (snr_db / 10)))
    return AudioBuffer(speech.samples + gain * n, speech.sample_rate)


@dataclass(frozen=True)
class RirSettings:
    max_order: int = 12
    length_s: float = 0.5
    prune_db: float | None = -60.0
    highpass_hz: float | None = 100.0


NOISE_MODES = ("babble", "music", "noise")


@dataclass(frozen=True)
class AugmentationRecipe:
    name: str
    modes: Mapping[str, float]
    snr_db: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: {"babble": (13.0, 20.0), "music": (5.0, 15.0), "noise": (0.0, 15.0)}
    )
    rir_policy: str = "generated_paired"
    min_speech_seconds: float = 3.5
    per_speaker_cap: int = 8
    n_rooms: int = 100
    positions_per_room: int = 4
    room_seed: int = 0
    rir: RirSettings = RirSettings()
    sad: str = "energy"  # or "external": masks supplied by another system
    target_rate: int | None = None
    babble_speakers: tuple[int, int] = (3, 7)

    def __post_init__(self):
        if self.rir_policy not in ("generated_paired", "external_rir_set"):
            raise ValueError(f"unknown rir_policy {self.rir_policy!r}")
        total = sum(self.modes.values())
        if not self.modes or abs(total - 1.0) > 1e-9 or min(self.modes.values()) < 0:
            raise ValueError(f"mode proportions must be non-negative and sum to 1, got {dict(self.modes)}")
        for mode in self.modes:
            cat = noise_category(mode)
            if cat is None and mode != "reverb":
                raise ValueError(f"unknown augmentation mode {mode!r}")
            if cat is not None:
                lo, hi = self.snr_db[cat]
                if lo > hi:
                    raise ValueError(f"empty SNR range for {cat}")


def noise_category(mode: str) -> str | None:
    base = mode.split("+")[-1]
    return base if base in NOISE_MODES else None


_FOUR_WAY = {"reverb": 0.25, "babble": 0.25, "music": 0.25, "noise": 0.25}

RECIPES = {
    "fixdata1": AugmentationRecipe("fixdata1", _FOUR_WAY, rir_policy="external_rir_set"),
    "fixdata2": AugmentationRecipe("fixdata2", _FOUR_WAY, rir_policy="generated_paired"),
    "fixdata3": AugmentationRecipe("fixdata3", _FOUR_WAY, rir_policy="generated_paired", sad="external"),
    "opendata4": AugmentationRecipe("opendata4", _FOUR_WAY, rir_policy="external_rir_set", target_rate=8000),
}


def get_recipe(name: str, **overrides) -> AugmentationRecipe:
    try:
        recipe = RECIPES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown recipe {name!r}; choose from {', '.join(RECIPES)}") from None
    return replace(recipe, **overrides) if overrides else recipe


class RirBank:
    """Lazily generated, memoised RIRs for the rooms of one recipe."""

    def __init__(self, recipe: AugmentationRecipe, sample_rate: int, cache: dict[str, Rir] | None = None):
        self.recipe = recipe
        self.sample_rate = sample_rate
        self.rirs: dict[str, Rir] = {} if cache is None else cache
        self._setups: dict[int, RoomSetup] = {}

    def setup(self, room_id: int) -> RoomSetup:
        if room_id not in self._setups:
            seed = derive_seed(self.recipe.room_seed, "room", room_id)
            self._setups[room_id] = sample_room_setup(
                seed, self.recipe.positions_per_room, sample_rate=self.sample_rate, room_id=room_id
            )
        return self._setups[room_id]

    def get(self, room_id: int, position: int) -> tuple[str, Rir]:
        setup = self.setup(room_id)
        rid = setup.rir_id(position)
        if rid not in self.rirs:
            s = self.recipe.rir
            src, mic = setup.placements[position]
            self.rirs[rid] = generate_rir(setup.room, src, mic, s.max_order, s.length_s, s.prune_db, s.highpass_hz)
        return rid, self.rirs[rid]


def _noise_excerpt(pool: Sequence[AudioBuffer], n: int, rng: np.random.Generator) -> AudioBuffer:
    buf = pool[int(rng.integers(len(pool)))]
    x = buf.samples
    if len(x) > n:
        start = int(rng.integers(len(x) - n + 1))
        x = x[start:start + n]
    return AudioBuffer(np.resize(x, n), buf.sample_rate)


def _babble(pool: Sequence[AudioBuffer], n: int, k_range: tuple[int, int], rng: np.random.Generator) -> AudioBuffer:
    k = min(int(rng.integers(k_range[0], k_range[1] + 1)), len(pool))
    picks = rng.choice(len(pool), size=k, replace=False)
    total = np.zeros(n)
    for i in sorted(picks):
        total += np.resize(pool[i].samples, n)
    return AudioBuffer(total, pool[0].sample_rate)


def augment_utterance(
    rec: UtteranceRecord,
    recipe: AugmentationRecipe,
    noise_pool: Mapping[str, Sequence[AudioBuffer]],
    rng_seed: int,
    audio: AudioBuffer,
    rir_source: RirBank | Mapping[str, Rir] | None = None,
    mode: str | None = None,
    copy_index: int = 0,
) -> tuple[AudioBuffer, UtteranceRecord]:
    """Produce one augmented copy of ``audio``.

    ``generated_paired``: one room, speech through RIR a and noise through a
    different RIR b of the same room. ``external_rir_set``: speech through a
    RIR drawn from ``rir_source`` and noise added dry.
    """
    rng = np.random.default_rng(rng_seed)
    modes = sorted(recipe.modes)
    drawn = modes[int(rng.choice(len(modes), p=[recipe.modes[m] for m in modes]))]
    mode = mode or drawn
    category = noise_category(mode)
    n = len(audio)
    meta: dict = {"source_utt_id": rec.utt_id, "mode": mode}

    paired = recipe.rir_policy == "generated_paired"
    reverb_speech = mode == "reverb" or mode.startswith("reverb+") or (paired and category is not None)

    speech_rir = noise_rir = None
    if reverb_speech:
        if paired:
            bank = rir_source if isinstance(rir_source, RirBank) else RirBank(recipe, audio.sample_rate)
            room_id = int(rng.integers(recipe.n_rooms))
            a, b = rng.choice(recipe.positions_per_room, size=2, replace=False)
            meta["room_id"] = room_id
            meta["speech_rir"], speech_rir = bank.get(room_id, int(a))
            if category is not None:
                meta["noise_rir"], noise_rir = bank.get(room_id, int(b))
        else:
            if not rir_source:
                raise ValueError("external_rir_set policy needs a non-empty RIR set")
            ids = sorted(rir_source)
            rid = ids[int(rng.integers(len(ids)))]
            meta["speech_rir"], speech_rir = rid, rir_source[rid]

    out = audio
    if speech_rir is not None:
        out, _ = reverberate_with_scale(audio, speech_rir, normalize=False)

    if category is not None:
        pool = noise_pool.get(category) or []
        if not pool:
            raise ValueError(f"noise pool for {category!r} is empty")
        if category == "babble":
            noise = _babble(pool, n, recipe.babble_speakers, rng)
        else:
            noise = _noise_excerpt(pool, n, rng)
        if noise_rir is not None:
            noise, _ = reverberate_with_scale(noise, noise_rir, normalize=False)
        snr = float(rng.uniform(*recipe.snr_db[category]))
        meta["snr_db"] = round(snr, 4)
        out = mix_at_snr(out, noise, snr)

    peak = float(np.max(np.abs(out.samples))) if n else 0.0
    if peak > 1.0:
        meta["scale"] = 1.0 / peak
        out = AudioBuffer(out.samples / peak, out.sample_rate)

    if category is None:
        tag = "reverb"
    elif paired or mode.startswith("reverb+"):
        tag = f"reverb+{category}"
    else:
        tag = category
    new = UtteranceRecord(
        utt_id=f"{rec.utt_id}-{tag}" + (f"-{copy_index}" if copy_index else ""),
        speaker_id=rec.speaker_id,
        path=rec.path,
        sample_rate=out.sample_rate,
        speech_seconds=rec.speech_seconds,
        augmentation_tag=tag,
        meta=meta,
    )
    return out, new


class EmptyManifestError(ValueError):
    pass


def build_training_manifest(
    source_manifest: Sequence[UtteranceRecord],
    recipe: AugmentationRecipe,
    sad_results: Mapping[str, float],
    augmented: Sequence[UtteranceRecord] = (),
    seed: int = 0,
) -> list[UtteranceRecord]:
    """Filter by speech duration and cap augmented copies per source utterance.

    ``sad_results`` maps clean utt_id -> speech seconds. Augmented records
    inherit the decision of their source utterance (``meta['source_utt_id']``).
    """
    missing = [r.utt_id for r in source_manifest if r.utt_id not in sad_results]
    if missing:
        raise KeyError(f"SAD results missing for {len(missing)} utterance(s), e.g. {missing[0]}")
    kept: dict[str, UtteranceRecord] = {}
    for rec in source_manifest:
        secs = float(sad_results[rec.utt_id])
        if secs >= recipe.min_speech_seconds:
            kept[rec.utt_id] = replace(rec, speech_seconds=secs)

    copies: dict[str, list[UtteranceRecord]] = {}
    for rec in augmented:
        src = rec.meta.get("source_utt_id")
        if src in kept:
            copies.setdefault(src, []).append(replace(rec, speech_seconds=kept[src].speech_seconds))

    out = list(kept.values())
    for src in kept:
        group = sorted(copies.get(src, []), key=lambda r: r.utt_id)
        if len(group) > recipe.per_speaker_cap:
            rng = np.random.default_rng(derive_seed(seed, "cap", src))
            pick = np.sort(rng.permutation(len(group))[: recipe.per_speaker_cap])
            group = [group[i] for i in pick]
        out.extend(group)
    if not out:
        raise EmptyManifestError("every utterance was filtered out of the training manifest")
    return out
