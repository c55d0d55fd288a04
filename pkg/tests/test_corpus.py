import json
import wave

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spkver.corpus import (
    AudioBuffer,
    AudioFormatError,
    ContainerError,
    EmbeddingSet,
    EmptyAudioError,
    ManifestError,
    ScoreSet,
    TrialFileError,
    TrialList,
    UtteranceRecord,
    load_embeddings,
    load_key,
    load_manifest,
    load_matrices,
    load_scores,
    load_trials,
    load_vectors,
    read_wav,
    resample,
    save_embeddings,
    save_manifest,
    save_matrices,
    save_scores,
    save_trials,
    save_vectors,
    write_wav,
)


def _raw_wav(path, ints, channels=1, rate=16000, width=2):
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(width)
        w.setframerate(rate)
        w.writeframes(np.asarray(ints, dtype=f"<i{width}").tobytes())


class TestWav:
    def test_zeros_read_as_zeros(self, tmp_path):
        _raw_wav(tmp_path / "z.wav", np.zeros(100))
        buf = read_wav(tmp_path / "z.wav")
        assert buf.sample_rate == 16000
        assert np.all(buf.samples == 0)

    def test_full_scale_value(self, tmp_path):
        _raw_wav(tmp_path / "m.wav", [32767, -32768])
        buf = read_wav(tmp_path / "m.wav")
        assert buf.samples[0] == 32767 / 32768
        assert buf.samples[1] == -1.0

    def test_stereo_downmix(self, tmp_path):
        _raw_wav(tmp_path / "s.wav", [16384, -16384] * 50, channels=2)
        buf = read_wav(tmp_path / "s.wav")
        assert len(buf) == 50
        assert np.all(buf.samples == 0.0)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_wav(tmp_path / "nope.wav")

    def test_non_pcm(self, tmp_path):
        (tmp_path / "bad.wav").write_bytes(b"RIFF\x00\x00\x00\x00WAVEjunkjunk")
        with pytest.raises(AudioFormatError):
            read_wav(tmp_path / "bad.wav")

    def test_empty_audio(self, tmp_path):
        _raw_wav(tmp_path / "e.wav", [])
        with pytest.raises(EmptyAudioError):
            read_wav(tmp_path / "e.wav")

    @given(st.lists(st.integers(-32768, 32767), min_size=1, max_size=200))
    def test_pcm16_round_trip_is_exact(self, tmp_path_factory, ints):
        path = tmp_path_factory.mktemp("rt") / "x.wav"
        buf = AudioBuffer(np.array(ints) / 32768.0, 8000)
        write_wav(path, buf)
        back = read_wav(path)
        assert back.sample_rate == 8000
        assert np.array_equal(back.samples, buf.samples)

    def test_buffer_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            AudioBuffer(np.zeros(3), 0)


class TestResample:
    def test_same_rate_is_identity(self):
        buf = AudioBuffer(np.random.default_rng(0).standard_normal(500), 16000)
        assert resample(buf, 16000).samples is buf.samples

    def test_length(self):
        out = resample(AudioBuffer(np.zeros(16000), 16000), 8000)
        assert out.sample_rate == 8000
        assert abs(len(out) - 8000) <= 1

    def test_sine_preserved(self):
        t = np.arange(16000) / 16000
        out = resample(AudioBuffer(np.sin(2 * np.pi * 1000 * t), 16000), 8000)
        ref = np.sin(2 * np.pi * 1000 * np.arange(len(out)) / 8000)
        trim = slice(100, -100)
        assert np.corrcoef(out.samples[trim], ref[trim])[0, 1] > 0.999

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            resample(AudioBuffer(np.zeros(10), 16000), 0)


def _records(n=3):
    return [
        UtteranceRecord(f"u{i}", f"s{i % 2}", f"wav/u{i}.wav", 16000, speech_seconds=1.5 * i, augmentation_tag="clean")
        for i in range(n)
    ]


class TestManifest:
    def test_empty_file(self, tmp_path):
        (tmp_path / "m.jsonl").write_text("")
        assert load_manifest(tmp_path / "m.jsonl") == []

    def test_round_trip(self, tmp_path):
        recs = _records()
        recs[1].meta["source_utt_id"] = "u0"
        save_manifest(tmp_path / "m.jsonl", recs)
        assert load_manifest(tmp_path / "m.jsonl") == recs

    def test_missing_speaker_names_line(self, tmp_path):
        lines = [json.dumps({"utt_id": "a", "speaker_id": "s", "path": "a.wav", "sample_rate": 16000}),
                 json.dumps({"utt_id": "b", "path": "b.wav", "sample_rate": 16000})]
        (tmp_path / "m.jsonl").write_text("\n".join(lines) + "\n")
        with pytest.raises(ManifestError, match=r":2: missing field\(s\) speaker_id"):
            load_manifest(tmp_path / "m.jsonl")

    def test_malformed_json(self, tmp_path):
        (tmp_path / "m.jsonl").write_text("{not json\n")
        with pytest.raises(ManifestError, match=":1:"):
            load_manifest(tmp_path / "m.jsonl")

    def test_duplicate_id(self, tmp_path):
        line = json.dumps({"utt_id": "a", "speaker_id": "s", "path": "a.wav", "sample_rate": 16000})
        (tmp_path / "m.jsonl").write_text(line + "\n" + line + "\n")
        with pytest.raises(ManifestError, match="duplicate"):
            load_manifest(tmp_path / "m.jsonl")

    def test_negative_speech_seconds(self):
        with pytest.raises(ValueError):
            UtteranceRecord("a", "s", "p", 16000, speech_seconds=-1.0)

    @given(st.lists(st.tuples(st.text("abcxyz-_", min_size=1, max_size=8), st.floats(0, 100)), max_size=10, unique_by=lambda t: t[0]))
    def test_round_trip_property(self, tmp_path_factory, items):
        recs = [UtteranceRecord(u, "spk", f"{u}.wav", 8000, speech_seconds=s) for u, s in items]
        path = tmp_path_factory.mktemp("m") / "m.jsonl"
        save_manifest(path, recs)
        assert load_manifest(path) == recs


class TestTrialsAndScores:
    def test_key_round_trip(self, tmp_path):
        tl = TrialList((("a", "b"), ("a", "c")), (True, False))
        save_trials(tmp_path / "k", tl)
        assert (tmp_path / "k").read_text() == "a b tgt\na c imp\n"
        assert load_key(tmp_path / "k") == tl
        assert load_trials(tmp_path / "k") == tl

    def test_plain_trial_list(self, tmp_path):
        (tmp_path / "t").write_text("m1 t1\nm1 t2\n")
        tl = load_trials(tmp_path / "t")
        assert tl.key is None and len(tl) == 2
        with pytest.raises(TrialFileError):
            tl.labels

    def test_duplicates_rejected(self):
        with pytest.raises(TrialFileError):
            TrialList((("a", "b"), ("a", "b")))

    def test_key_must_cover_trials(self):
        with pytest.raises(TrialFileError):
            TrialList((("a", "b"),), (True, False))

    def test_bad_label(self, tmp_path):
        (tmp_path / "k").write_text("a b maybe\n")
        with pytest.raises(TrialFileError, match=":1:"):
            load_key(tmp_path / "k")

    def test_score_file_format_and_order(self, tmp_path):
        trials = (("m", "z"), ("m", "a"), ("b", "c"))
        s = ScoreSet(trials, np.array([0.1234567, -2.0, 3.5]))
        save_scores(tmp_path / "s", s)
        assert (tmp_path / "s").read_text() == "m z 0.123457\nm a -2.000000\nb c 3.500000\n"
        back = load_scores(tmp_path / "s")
        assert back.trials == trials

    def test_scores_must_be_finite(self):
        with pytest.raises(ValueError):
            ScoreSet((("a", "b"),), np.array([np.nan]))

    def test_aligned_to(self):
        s = ScoreSet((("a", "b"), ("c", "d")), np.array([1.0, 2.0]))
        out = s.aligned_to(TrialList((("c", "d"), ("a", "b"))))
        assert out.scores.tolist() == [2.0, 1.0]
        with pytest.raises(TrialFileError):
            s.aligned_to(TrialList((("x", "y"),)))


class TestEmbeddings:
    def test_empty_set(self, tmp_path):
        save_embeddings(tmp_path / "e", EmbeddingSet(512))
        assert (tmp_path / "e").stat().st_size == 16
        back = load_embeddings(tmp_path / "e")
        assert back.dim == 512 and len(back) == 0

    def test_one_hot(self, tmp_path):
        v = np.zeros(8)
        v[0] = 1
        save_embeddings(tmp_path / "e", EmbeddingSet(8, {"x": v}))
        assert np.array_equal(load_embeddings(tmp_path / "e")["x"], v.astype(np.float32))

    def test_thousand_vectors_bitwise(self, tmp_path, rng):
        m = rng.standard_normal((1000, 16)).astype(np.float32)
        es = EmbeddingSet(16, [(f"id{i}", m[i]) for i in range(1000)])
        save_embeddings(tmp_path / "e", es)
        back = load_embeddings(tmp_path / "e")
        assert list(back) == list(es)
        assert back.matrix().tobytes() == m.tobytes()

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            EmbeddingSet(4, {"a": np.ones(3)})

    def test_zero_and_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            EmbeddingSet(2, {"a": np.zeros(2)})
        with pytest.raises(ValueError):
            EmbeddingSet(2, {"a": [np.inf, 1.0]})

    def test_bad_magic_and_version(self, tmp_path):
        save_embeddings(tmp_path / "e", EmbeddingSet(2, {"a": [1.0, 2.0]}))
        data = bytearray((tmp_path / "e").read_bytes())
        (tmp_path / "m").write_bytes(b"XXXX" + bytes(data[4:]))
        with pytest.raises(ContainerError, match="magic"):
            load_embeddings(tmp_path / "m")
        data[4] = 9
        (tmp_path / "v").write_bytes(bytes(data))
        with pytest.raises(ContainerError, match="version"):
            load_embeddings(tmp_path / "v")

    def test_truncated(self, tmp_path):
        save_embeddings(tmp_path / "e", EmbeddingSet(4, {"a": np.ones(4)}))
        (tmp_path / "t").write_bytes((tmp_path / "e").read_bytes()[:-3])
        with pytest.raises(ContainerError):
            load_embeddings(tmp_path / "t")

    @given(st.lists(st.lists(st.floats(-1e6, 1e6, width=32).filter(lambda x: x != 0), min_size=3, max_size=3), max_size=20))
    def test_round_trip_property(self, tmp_path_factory, rows):
        es = EmbeddingSet(3, [(f"k{i}", r) for i, r in enumerate(rows)])
        path = tmp_path_factory.mktemp("e") / "e.sveb"
        save_embeddings(path, es)
        back = load_embeddings(path)
        for k in es:
            assert back[k].tobytes() == es[k].tobytes()


class TestOtherContainers:
    def test_vectors(self, tmp_path):
        save_vectors(tmp_path / "r", b"SVRI", {"room0-pos1": np.arange(5.0)})
        assert np.array_equal(load_vectors(tmp_path / "r", b"SVRI")["room0-pos1"], np.arange(5.0))
        with pytest.raises(ContainerError):
            load_vectors(tmp_path / "r", b"SVEB")

    def test_matrices(self, tmp_path, rng):
        mats = {"a": rng.standard_normal((3, 2)), "b": np.zeros((0, 2)), "c": rng.standard_normal((1, 7))}
        save_matrices(tmp_path / "f", mats)
        back = load_matrices(tmp_path / "f")
        assert list(back) == ["a", "b", "c"]
        for k in mats:
            assert np.array_equal(back[k], mats[k].astype(np.float32))
        (tmp_path / "t").write_bytes((tmp_path / "f").read_bytes()[:-4])
        with pytest.raises(ContainerError):
            load_matrices(tmp_path / "t")
