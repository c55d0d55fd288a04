"""Synthetic demo corpus: formant-filtered pulse trains with per-speaker vocal tracts.

Each speaker has a vocal-tract length factor, a pitch range, a spectral tilt
and an extra high resonance. Utterances are random vowel sequences grouped
into words with pauses, so that energy SAD and speaker embeddings both have
something to work with while speakers still overlap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from ..acoustics import RoomSpec, generate_rir, reverberate
from ..corpus import AudioBuffer, TrialList, UtteranceRecord, save_manifest, save_trials, write_wav
from ..seeding import derive_seed

# average adult formants (F1, F2, F3) for a small vowel inventory
VOWELS = np.array(
    [
        [730, 1090, 2440],
        [270, 2290, 3010],
        [300, 870, 2240],
        [530, 1840, 2480],
        [570, 840, 2410],
        [660, 1720, 2410],
        [440, 1020, 2240],
        [390, 1990, 2550],
    ],
    dtype=float,
)


@dataclass(frozen=True)
class DemoSpec:
    n_speakers: int = 30
    train_speakers: int = 18
    dev_speakers: int = 6
    train_utts: int = 14
    test_utts: int = 24
    train_duration_s: tuple[float, float] = (8.0, 12.0)
    test_duration_s: tuple[float, float] = (5.0, 8.0)
    sample_rate: int = 16000
    far_field: float = 0.5  # share of dev/eval utterances played through a room
    noise_files: int = 4

    def __post_init__(self):
        if self.train_speakers < 2 or self.dev_speakers < 2:
            raise ValueError("need at least two training and two development speakers")
        if self.n_speakers - self.train_speakers - self.dev_speakers < 2:
            raise ValueError("need at least two evaluation speakers")


@dataclass(frozen=True)
class Voice:
    vtl: float
    f0: float
    tilt: float
    extra_formant: float
    breath: float
    bandwidth: float
    accent: tuple = ()  # per-vowel formant multipliers


LHS_CANDIDATES = 200
N_TRAITS = 5


def trait_design(seed: int, group: str, n_slots: int) -> np.ndarray:
    """Maximin Latin hypercube: (n_slots, N_TRAITS) stratum indices.

    The candidate with the largest minimum pairwise distance is kept, so no
    two speakers of a group share similar values for every trait.
    """
    rng = np.random.default_rng(derive_seed(seed, "strata", group, n_slots))
    best, best_d = None, -1.0
    for _ in range(LHS_CANDIDATES if n_slots > 1 else 1):
        design = np.stack([rng.permutation(n_slots) for _ in range(N_TRAITS)], axis=1)
        diff = design[:, None, :] - design[None, :, :]
        d = np.sqrt((diff**2).sum(-1))[np.triu_indices(n_slots, 1)]
        score = d.min() if d.size else 0.0
        if score > best_d:
            best, best_d = design, score
    return best


def speaker_voice(seed: int, speaker: int, slot: int = 0, n_slots: int = 1, group: str = "") -> Voice:
    """Voice traits for one speaker, the ``slot``-th of ``n_slots`` in ``group``.

    Each group covers every trait range evenly (see ``trait_design``), which
    keeps groups matched in difficulty.
    """
    if not 0 <= slot < n_slots:
        raise ValueError(f"slot {slot} outside 0..{n_slots - 1}")
    rng = np.random.default_rng(derive_seed(seed, "voice", speaker))
    cell = trait_design(seed, group, n_slots)[slot]
    u = (cell + rng.uniform(0.25, 0.75, N_TRAITS)) / n_slots
    return Voice(
        vtl=0.75 + 0.6 * u[0],
        f0=float(np.exp(np.log(85) + (np.log(260) - np.log(85)) * u[1])),
        tilt=0.85 + 0.13 * u[2],
        extra_formant=3200 + 2000 * u[3],
        breath=float(rng.uniform(0.02, 0.25)),
        bandwidth=0.6 + 1.0 * u[4],
        accent=tuple(map(tuple, rng.uniform(0.85, 1.15, VOWELS.shape))),
    )


def _resonator(freq, bw, fs):
    r = np.exp(-np.pi * bw / fs)
    theta = 2 * np.pi * freq / fs
    return [1 - r], [1.0, -2 * r * np.cos(theta), r * r]


def _vowel(voice: Voice, formants: np.ndarray, n: int, f0_track: np.ndarray, fs: int, rng) -> np.ndarray:
    phase = np.cumsum(f0_track / fs)
    pulses = np.diff(np.floor(phase), prepend=0.0)
    excitation = signal.lfilter([1.0], [1.0, -voice.tilt], pulses)
    excitation += voice.breath * rng.standard_normal(n) * np.std(excitation)
    y = excitation
    freqs = list(formants * voice.vtl) + [voice.extra_formant * voice.vtl]
    for k, f in enumerate(freqs):
        f = min(f, 0.45 * fs)
        b, a = _resonator(f, (60 + 30 * k) * voice.bandwidth, fs)
        y = signal.lfilter(b, a, y)
    env = np.ones(n)
    ramp = min(n // 4, int(0.02 * fs))
    if ramp:
        win = 0.5 - 0.5 * np.cos(np.linspace(0, np.pi, ramp))
        env[:ramp], env[-ramp:] = win, win[::-1]
    return y * env


def synthesize_utterance(voice: Voice, seed: int, duration_s: float, fs: int = 16000) -> np.ndarray:
    rng = np.random.default_rng(seed)
    total = int(duration_s * fs)
    out = []
    used = int(rng.uniform(0.15, 0.4) * fs)
    out.append(np.zeros(used))
    while used < total:
        for _ in range(int(rng.integers(2, 5))):
            n = int(rng.uniform(0.1, 0.3) * fs)
            drift = np.cumsum(rng.normal(0, 0.002, n))
            f0 = voice.f0 * rng.uniform(0.93, 1.07) * np.exp(drift - drift.mean())
            v = int(rng.integers(len(VOWELS)))
            formants = VOWELS[v] * np.asarray(voice.accent[v]) * rng.uniform(0.97, 1.03, 3)
            out.append(_vowel(voice, formants, n, f0, fs, rng))
            used += n
        gap = int(rng.uniform(0.04, 0.15) * fs)
        out.append(np.zeros(gap))
        used += gap
    y = np.concatenate(out)[:total]
    # channel: random gain and a mild first-order colouring
    y = signal.lfilter([1.0, rng.uniform(-0.08, 0.08)], [1.0], y)
    y = y / (np.max(np.abs(y)) + 1e-12) * rng.uniform(0.3, 0.7)
    return y + rng.standard_normal(total) * 10 ** (-55 / 20)


def _music(seed: int, n: int, fs: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    y = np.zeros(n)
    t0 = 0
    while t0 < n:
        dur = int(rng.uniform(0.2, 0.5) * fs)
        t = np.arange(min(dur, n - t0)) / fs
        for _ in range(int(rng.integers(1, 4))):
            f = 110 * 2 ** (rng.integers(0, 36) / 12)
            for h in range(1, 5):
                y[t0 : t0 + len(t)] += np.sin(2 * np.pi * f * h * t) / h * np.exp(-3 * t)
        t0 += dur
    return 0.5 * y / np.max(np.abs(y))


def _coloured_noise(seed: int, n: int, fs: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    b, a = signal.butter(2, rng.uniform(500, 6000) / (fs / 2))
    y = signal.lfilter(b, a, rng.standard_normal(n))
    return 0.5 * y / np.max(np.abs(y))


def _far_field(x: np.ndarray, seed: int, fs: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    dims = (rng.uniform(4, 8), rng.uniform(3, 6), rng.uniform(2.5, 3.5))
    room = RoomSpec(dims, float(rng.uniform(0.5, 0.8)), sample_rate=fs)
    src = np.array(dims) * rng.uniform(0.2, 0.8, 3)
    mic = np.array(dims) * rng.uniform(0.2, 0.8, 3)
    while np.linalg.norm(src - mic) < 0.5:
        mic = np.array(dims) * rng.uniform(0.2, 0.8, 3)
    rir = generate_rir(room, src, mic, max_order=10, length_s=0.4, highpass_hz=100.0)
    return reverberate(AudioBuffer(x, fs), rir).samples


def all_pairs_key(records: list[UtteranceRecord]) -> TrialList:
    trials, key = [], []
    for i, a in enumerate(records):
        for b in records[i + 1 :]:
            trials.append((a.utt_id, b.utt_id))
            key.append(a.speaker_id == b.speaker_id)
    return TrialList(tuple(trials), tuple(key))


def generate_demo_corpus(out_dir, spec: DemoSpec = DemoSpec(), seed: int = 0) -> dict:
    """Write wavs, manifests, trial keys and noise pools under ``out_dir``.

    Speakers are split into training, development and evaluation groups.
    Returns the written lists by role, relative to ``out_dir``.
    """
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    fs = spec.sample_rate
    groups = {
        "train": range(spec.train_speakers),
        "dev": range(spec.train_speakers, spec.train_speakers + spec.dev_speakers),
        "eval": range(spec.train_speakers + spec.dev_speakers, spec.n_speakers),
    }
    paths = {}
    for name, speakers in groups.items():
        n_utts = spec.train_utts if name == "train" else spec.test_utts
        records = []
        for slot, spk in enumerate(speakers):
            voice = speaker_voice(seed, spk, slot, len(speakers), name)
            for u in range(n_utts):
                utt = f"spk{spk:03d}-{name}{u:02d}"
                useed = derive_seed(seed, "utt", utt)
                span = spec.train_duration_s if name == "train" else spec.test_duration_s
                dur = np.random.default_rng(useed).uniform(*span)
                x = synthesize_utterance(voice, useed, dur, fs)
                tag = "clean"
                if name != "train" and np.random.default_rng(useed + 1).random() < spec.far_field:
                    x = _far_field(x, derive_seed(seed, "room", utt), fs)
                    tag = "reverb"
                rel = f"wav/{utt}.wav"
                write_wav(out / rel, AudioBuffer(np.clip(x, -1, 1), fs))
                records.append(UtteranceRecord(utt, f"spk{spk:03d}", rel, fs, augmentation_tag=tag))
        save_manifest(out / f"{name}.jsonl", records)
        paths[name] = f"{name}.jsonl"
        if name != "train":
            save_trials(out / f"{name}.key", all_pairs_key(records))
            paths[f"{name}_key"] = f"{name}.key"

    noise = []
    for kind, maker in (("music", _music), ("noise", _coloured_noise)):
        for i in range(spec.noise_files):
            rel = f"noise/{kind}{i:02d}.wav"
            (out / "noise").mkdir(exist_ok=True)
            write_wav(out / rel, AudioBuffer(maker(derive_seed(seed, kind, i), 8 * fs, fs), fs))
            noise.append(UtteranceRecord(f"{kind}{i:02d}", kind, rel, fs, augmentation_tag=kind))
    save_manifest(out / "noise.jsonl", noise)
    paths["noise"] = "noise.jsonl"
    (out / "corpus.json").write_text(json.dumps(paths, indent=2, sort_keys=True) + "\n")
    return paths
