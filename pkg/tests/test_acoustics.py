import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import naive_convolve, sabine_t60
from spkver.acoustics import (
    AugmentationRecipe,
    EmptyManifestError,
    Rir,
    RirBank,
    RoomSpec,
    augment_utterance,
    build_training_manifest,
    generate_rir,
    get_recipe,
    mix_at_snr,
    reverberate,
    reverberate_with_scale,
    sample_room_setup,
    schroeder_t60,
)
from spkver.corpus import AudioBuffer, UtteranceRecord

FS = 16000


def _energy_db(x):
    return 10 * np.log10(np.sum(np.asarray(x) ** 2))


class TestRoomSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            RoomSpec((0, 4, 3), 0.5)
        with pytest.raises(ValueError):
            RoomSpec((5, 4, 3), 1.0)
        assert RoomSpec((5, 4, 3), 0.5).wall_reflectivity == (0.5,) * 6

    def test_sabine_matches_oracle(self):
        assert RoomSpec((5, 4, 3), 0.9).sabine_t60() == pytest.approx(sabine_t60((5, 4, 3), 0.9))


class TestGenerateRir:
    def test_anechoic_direct_path(self):
        room = RoomSpec((6, 5, 4), 0.0)
        src, mic = np.array([1.0, 2.0, 2.0]), np.array([2.7, 2.0, 2.0])
        taps = generate_rir(room, src, mic, max_order=5, length_s=0.05).taps
        peak = int(np.argmax(np.abs(taps)))
        assert peak == 80
        assert taps[peak] == pytest.approx(1 / (4 * np.pi * 1.7), rel=0.02)

    def test_anechoic_single_significant_tap(self):
        room = RoomSpec((6, 5, 4), 0.0)
        taps = generate_rir(room, [1.0, 2.0, 2.0], [2.7, 2.0, 2.0], max_order=5, length_s=0.05).taps
        # integer delay: the windowed sinc collapses to one tap
        others = np.delete(taps, 80)
        assert np.all(np.abs(others) < 1e-6 * np.abs(taps[80]))

    def test_order_zero_ignores_beta(self):
        src, mic = [1.0, 1.5, 1.2], [3.1, 2.2, 1.7]
        a = generate_rir(RoomSpec((5, 4, 3), 0.0), src, mic, max_order=0, length_s=0.1).taps
        b = generate_rir(RoomSpec((5, 4, 3), 0.8), src, mic, max_order=0, length_s=0.1).taps
        assert np.allclose(a, b)

    def test_energy_grows_with_order(self):
        room = RoomSpec((5, 4, 3), 0.7)
        energies = [
            np.sum(generate_rir(room, [1.0, 1.5, 1.2], [3.1, 2.2, 1.7], order, 0.3, prune_db=None).taps ** 2)
            for order in range(6)
        ]
        assert np.all(np.diff(energies) >= 0)

    def test_t60_near_sabine(self):
        room = RoomSpec((5, 4, 3), 0.9)
        rir = generate_rir(room, [1.3, 1.1, 1.4], [3.6, 2.7, 1.6], max_order=60, length_s=0.8, prune_db=None, highpass_hz=100.0)
        assert schroeder_t60(rir) == pytest.approx(room.sabine_t60(), rel=0.3)

    def test_invalid_positions(self):
        room = RoomSpec((5, 4, 3), 0.5)
        with pytest.raises(ValueError):
            generate_rir(room, [6, 1, 1], [1, 1, 1])
        with pytest.raises(ValueError):
            generate_rir(room, [1, 1, 1], [1, 1, 1])
        with pytest.raises(ValueError):
            generate_rir(room, [1, 1, 1], [2, 2, 2], max_order=-1)

    def test_rir_rejects_all_zero(self):
        with pytest.raises(ValueError):
            Rir(np.zeros(4), FS)


class TestReverberate:
    def test_unit_impulse_identity_and_delay(self, rng):
        x = AudioBuffer(rng.uniform(-0.5, 0.5, 300), FS)
        assert np.allclose(reverberate(x, Rir([1.0], FS)).samples, x.samples)
        h = np.zeros(10)
        h[7] = 1
        out = reverberate(x, Rir(h, FS)).samples
        assert np.allclose(out[7:], x.samples[:-7]) and np.allclose(out[:7], 0)

    @given(st.integers(1, 400), st.integers(1, 200), st.integers(0, 10**6))
    def test_matches_naive_convolution(self, n, m, seed):
        rng = np.random.default_rng(seed)
        x, h = rng.uniform(-0.1, 0.1, n), rng.standard_normal(m) * 0.1
        h[0] = 1.0
        out = reverberate(AudioBuffer(x, FS), Rir(h, FS), normalize=False).samples
        assert len(out) == n
        assert np.max(np.abs(out - naive_convolve(x, h)[:n])) < 1e-10

    def test_linearity(self, rng):
        x, y = rng.standard_normal(500), rng.standard_normal(500)
        rir = Rir(rng.standard_normal(64), FS)
        f = lambda s: reverberate(AudioBuffer(s, FS), rir, normalize=False).samples
        assert np.allclose(f(2 * x - 3 * y), 2 * f(x) - 3 * f(y), atol=1e-10)

    def test_peak_normalisation_reports_scale(self):
        out, scale = reverberate_with_scale(AudioBuffer(np.full(10, 0.8), FS), Rir([1.0, 1.0], FS))
        assert np.max(np.abs(out.samples)) == pytest.approx(1.0)
        assert scale == pytest.approx(1 / 1.6)

    def test_rate_mismatch(self):
        with pytest.raises(ValueError):
            reverberate(AudioBuffer(np.ones(10), 8000), Rir([1.0], FS))


class TestMixAtSnr:
    def test_zero_db(self, rng):
        s, n = rng.standard_normal(1000), rng.standard_normal(1000) * 3
        out = mix_at_snr(AudioBuffer(s, FS), AudioBuffer(n, FS), 0.0).samples
        assert np.sum((out - s) ** 2) / np.sum(s**2) == pytest.approx(1.0, rel=1e-6)

    def test_twenty_db_amplitude(self):
        s = np.ones(100)
        n = np.tile([1.0, -1.0], 50)
        out = mix_at_snr(AudioBuffer(s, FS), AudioBuffer(n, FS), 20.0).samples
        assert np.allclose(out - s, 0.1 * n)

    def test_huge_snr(self, rng):
        s = rng.standard_normal(1000)
        out = mix_at_snr(AudioBuffer(s, FS), AudioBuffer(rng.standard_normal(300), FS), 100.0).samples
        assert np.linalg.norm(out - s) / np.linalg.norm(s) < 1e-4

    @given(st.floats(-20, 40), st.integers(10, 3000), st.integers(0, 10**6))
    def test_snr_exact(self, snr, n_noise, seed):
        rng = np.random.default_rng(seed)
        s = rng.standard_normal(2000)
        noise = rng.standard_normal(n_noise)
        out = mix_at_snr(AudioBuffer(s, FS), AudioBuffer(noise, FS), snr).samples
        assert abs(_energy_db(s) - _energy_db(out - s) - snr) < 0.01

    def test_masked_region(self, rng):
        s = np.concatenate([np.zeros(500), rng.standard_normal(500)])
        mask = np.arange(1000) >= 500
        out = mix_at_snr(AudioBuffer(s, FS), AudioBuffer(rng.standard_normal(1000), FS), 10.0, mask).samples
        assert abs(_energy_db(s[mask]) - _energy_db((out - s)[mask]) - 10.0) < 0.01

    def test_errors(self):
        with pytest.raises(ValueError):
            mix_at_snr(AudioBuffer(np.zeros(10), FS), AudioBuffer(np.ones(10), FS), 0.0)
        with pytest.raises(ValueError):
            mix_at_snr(AudioBuffer(np.ones(10), FS), AudioBuffer(np.zeros(10), FS), 0.0)
        with pytest.raises(ValueError):
            mix_at_snr(AudioBuffer(np.ones(10), FS), AudioBuffer(np.ones(10), 8000), 0.0)


class TestRoomSetup:
    def test_deterministic(self):
        a, b = sample_room_setup(42), sample_room_setup(42)
        assert a.room == b.room
        assert all(np.array_equal(p, q) for pa, pb in zip(a.placements, b.placements) for p, q in zip(pa, pb))

    def test_constraints_over_many_seeds(self):
        for seed in range(1000):
            setup = sample_room_setup(seed)
            dims = np.array(setup.room.dims)
            assert 3 <= dims[0] <= 10 and 3 <= dims[1] <= 10 and 2.5 <= dims[2] <= 4
            assert len(setup.placements) == 4
            for src, mic in setup.placements:
                assert np.linalg.norm(src - mic) >= 0.5
                for p in (src, mic):
                    assert np.all(p >= 0.3) and np.all(p <= dims - 0.3)


def _pool():
    rng = np.random.default_rng(9)
    return {k: [AudioBuffer(rng.standard_normal(4000) * 0.1, FS) for _ in range(8)] for k in ("babble", "music", "noise")}


def _rec(utt="u1"):
    return UtteranceRecord(utt, "spk1", f"{utt}.wav", FS, speech_seconds=4.0)


class TestRecipes:
    def test_presets(self):
        assert get_recipe("FixData2").rir_policy == "generated_paired"
        assert get_recipe("fixdata1").rir_policy == "external_rir_set"
        assert get_recipe("opendata4").target_rate == 8000
        with pytest.raises(ValueError):
            get_recipe("fixdata9")

    def test_validation(self):
        with pytest.raises(ValueError):
            AugmentationRecipe("x", {"reverb": 0.5, "noise": 0.6})
        with pytest.raises(ValueError):
            AugmentationRecipe("x", {"thunder": 1.0})
        with pytest.raises(ValueError):
            AugmentationRecipe("x", {"noise": 1.0}, snr_db={"noise": (5.0, 1.0)})


class TestAugmentUtterance:
    def test_impulse_reverb_is_identity(self, rng):
        recipe = get_recipe("fixdata1")
        x = AudioBuffer(rng.uniform(-0.5, 0.5, 2000), FS)
        out, rec = augment_utterance(_rec(), recipe, _pool(), 3, x, {"imp": Rir([1.0], FS)}, mode="reverb")
        assert np.array_equal(out.samples, x.samples)
        assert rec.augmentation_tag == "reverb" and rec.meta["source_utt_id"] == "u1"

    def test_paired_uses_two_rirs_of_one_room(self, rng):
        recipe = get_recipe("fixdata2", n_rooms=3, rir=get_recipe("fixdata2").rir.__class__(max_order=3, length_s=0.1))
        x = AudioBuffer(rng.uniform(-0.5, 0.5, 4000), FS)
        out, rec = augment_utterance(_rec(), recipe, _pool(), 11, x, RirBank(recipe, FS), mode="noise")
        room = f"room{rec.meta['room_id']:05d}"
        assert rec.meta["speech_rir"] != rec.meta["noise_rir"]
        assert rec.meta["speech_rir"].startswith(room) and rec.meta["noise_rir"].startswith(room)
        assert rec.augmentation_tag == "reverb+noise"
        assert rec.speaker_id == "spk1"

    def test_external_adds_dry_noise(self, rng):
        recipe = get_recipe("fixdata1")
        x = AudioBuffer(rng.uniform(-0.5, 0.5, 4000), FS)
        _, rec = augment_utterance(_rec(), recipe, _pool(), 2, x, {"r": Rir([1.0, 0.3], FS)}, mode="music")
        assert rec.augmentation_tag == "music" and "noise_rir" not in rec.meta
        assert 5.0 <= rec.meta["snr_db"] <= 15.0

    def test_deterministic(self, rng):
        recipe = get_recipe("fixdata2", n_rooms=2)
        x = AudioBuffer(rng.uniform(-0.5, 0.5, 4000), FS)
        a = augment_utterance(_rec(), recipe, _pool(), 5, x, RirBank(recipe, FS))
        b = augment_utterance(_rec(), recipe, _pool(), 5, x, RirBank(recipe, FS))
        assert a[1] == b[1]
        assert a[0].samples.tobytes() == b[0].samples.tobytes()

    def test_empty_pool(self, rng):
        x = AudioBuffer(rng.uniform(-0.5, 0.5, 1000), FS)
        with pytest.raises(ValueError):
            augment_utterance(_rec(), get_recipe("fixdata1"), {}, 1, x, {"r": Rir([1.0], FS)}, mode="noise")

    def test_output_never_clips(self, rng):
        x = AudioBuffer(np.full(1000, 0.9), FS)
        out, rec = augment_utterance(_rec(), get_recipe("fixdata1"), _pool(), 1, x, {"r": Rir([1.0, 1.0], FS)}, mode="reverb")
        assert np.max(np.abs(out.samples)) <= 1.0 and "scale" in rec.meta


class TestTrainingManifest:
    def test_boundary(self):
        recs = [_rec("a"), _rec("b")]
        out = build_training_manifest(recs, get_recipe("fixdata2"), {"a": 3.4, "b": 3.5})
        assert [r.utt_id for r in out] == ["b"]
        assert out[0].speech_seconds == 3.5

    def test_cap_is_deterministic(self):
        src = _rec("a")
        copies = [
            UtteranceRecord(f"a-aug-{i}", "spk1", "x.wav", FS, meta={"source_utt_id": "a"}) for i in range(20)
        ]
        recipe = get_recipe("fixdata2")
        out1 = build_training_manifest([src], recipe, {"a": 5.0}, copies, seed=3)
        out2 = build_training_manifest([src], recipe, {"a": 5.0}, copies[::-1], seed=3)
        assert len(out1) == 9
        assert out1 == out2
        assert all(r.speech_seconds == 5.0 for r in out1)

    def test_augmented_follow_their_source(self):
        copies = [UtteranceRecord("a-r", "spk1", "x.wav", FS, meta={"source_utt_id": "a"})]
        with pytest.raises(EmptyManifestError):
            build_training_manifest([_rec("a")], get_recipe("fixdata2"), {"a": 1.0}, copies)

    def test_missing_sad(self):
        with pytest.raises(KeyError):
            build_training_manifest([_rec("a")], get_recipe("fixdata2"), {})
