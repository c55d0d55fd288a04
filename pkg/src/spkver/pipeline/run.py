"""The experiment graph: corpus -> augment -> SAD -> features -> extractors ->
embeddings -> back-end -> scores -> s-norm -> fusion/calibration -> report."""

from __future__ import annotations

import json
import logging
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..acoustics import RirBank, augment_utterance, build_training_manifest, get_recipe
from ..backend import CohortSet, CsmlConfig, CsmlModel, make_scorer, s_normalize, score_trials, train_csml
from ..corpus import (
    AudioBuffer,
    EmbeddingSet,
    ScoreSet,
    TrialList,
    UtteranceRecord,
    load_embeddings,
    load_manifest,
    load_matrices,
    load_scores,
    load_trials,
    read_wav,
    resample,
    save_embeddings,
    save_manifest,
    save_matrices,
    save_scores,
    save_vectors,
    write_wav,
)
from ..evaluation import DcfParams, FusionModel, det_points, fuse, report, run_strategy, split_devset
from ..frontend import (
    FeatureMatrix,
    MfccConfig,
    SadConfig,
    apply_cmn_sliding,
    apply_cmvn_global,
    compute_mfcc,
    energy_sad,
    speech_seconds,
    wpe_dereverberate,
)
from ..nnet import Network, TrainConfig, extract_embeddings, get_arch, train_extractor
from ..seeding import derive_seed
from .config import load_config
from .demo import DemoSpec, generate_demo_corpus
from .stages import Workspace, run_stage

log = logging.getLogger(__name__)

BABBLE_POOL = 24


def _write_json(path: Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _feature_job(args):
    path, rate, mfcc_cfg, wpe = args
    buf = read_wav(path)
    if buf.sample_rate != rate:
        buf = resample(buf, rate)
    if wpe:
        buf = wpe_dereverberate(buf)
    return compute_mfcc(buf, mfcc_cfg).data


class Experiment:
    """One configured experiment bound to a workspace directory."""

    def __init__(self, cfg: dict, workspace, force: bool = False, jobs: int = 1):
        self.cfg = cfg
        self.ws = Workspace(workspace).init()
        self.force = force
        self.jobs = max(1, int(jobs))
        self.seed = int(cfg["seed"])
        fe = cfg["frontend"]
        self.rate = int(fe["sample_rate"])
        self.mfcc = MfccConfig.for_rate(self.rate, num_ceps=fe["num_ceps"], num_mel_bins=fe["num_mel_bins"])
        self.sad_cfg = SadConfig(frame=self.mfcc, **fe["sad"])
        aug = cfg["augmentation"]
        self.recipe = get_recipe(
            aug["recipe"],
            n_rooms=aug["n_rooms"],
            per_speaker_cap=aug["per_speaker_cap"],
            room_seed=derive_seed(self.seed, "rooms") % (2**31),
        )

    # paths -----------------------------------------------------------------

    @property
    def corpus_dir(self) -> Path:
        d = self.cfg["corpus"]["dir"]
        return Path(d) if d is not None else self.ws.path("corpus")

    def corpus_file(self, role: str) -> Path:
        index = json.loads((self.corpus_dir / "corpus.json").read_text())
        if role not in index:
            raise KeyError(f"corpus.json has no {role!r} entry")
        return self.corpus_dir / index[role]

    @property
    def systems(self) -> list[dict]:
        return self.cfg["systems"]

    def system(self, name: str) -> dict:
        for s in self.systems:
            if s["name"] == name:
                return s
        raise KeyError(f"unknown system {name!r}")

    def _run(self, name, section, inputs, outputs, fn) -> bool:
        return run_stage(self.ws, name, section, inputs, outputs, fn, self.seed, self.force)

    @staticmethod
    def _records(manifest: Path) -> list[tuple[UtteranceRecord, Path]]:
        base = manifest.parent
        return [(r, base / r.path) for r in load_manifest(manifest)]

    def _audio(self, path: Path) -> AudioBuffer:
        buf = read_wav(path)
        return buf if buf.sample_rate == self.rate else resample(buf, self.rate)

    # stages ----------------------------------------------------------------

    def stage_demo_corpus(self) -> bool:
        if self.cfg["corpus"]["dir"] is not None:
            log.info("using corpus at %s", self.corpus_dir)
            return False
        out = self.ws.path("corpus")
        demo = dict(self.cfg["corpus"]["demo"])
        for key in ("train_duration_s", "test_duration_s"):
            demo[key] = tuple(demo[key])
        spec = DemoSpec(sample_rate=self.rate, **demo)

        def fn():
            shutil.rmtree(out, ignore_errors=True)
            generate_demo_corpus(out, spec, self.seed)

        return self._run("demo-corpus", {"demo": self.cfg["corpus"]["demo"], "rate": self.rate}, [], [out], fn)

    def stage_augment(self) -> bool:
        aug_dir, rir_file = self.ws.path("augment"), self.ws.path("rirs", "rirs.svri")
        train_m, noise_m = self.corpus_file("train"), self.corpus_file("noise")

        def fn():
            shutil.rmtree(aug_dir, ignore_errors=True)
            (aug_dir / "wav").mkdir(parents=True)
            train = self._records(train_m)
            pool: dict[str, list[AudioBuffer]] = {"music": [], "noise": []}
            for rec, path in self._records(noise_m):
                pool.setdefault(rec.speaker_id, []).append(self._audio(path))
            rng = np.random.default_rng(derive_seed(self.seed, "babble-pool"))
            picks = sorted(rng.choice(len(train), size=min(BABBLE_POOL, len(train)), replace=False))
            pool["babble"] = [self._audio(train[i][1]) for i in picks]
            bank = RirBank(self.recipe, self.rate)
            records = []
            for rec, path in train:
                audio = self._audio(path)
                for copy in range(int(self.cfg["augmentation"]["copies"])):
                    seed = derive_seed(self.seed, "augment", rec.utt_id, copy)
                    out, new = augment_utterance(rec, self.recipe, pool, seed, audio, bank, copy_index=copy)
                    new = replace(new, path=f"wav/{new.utt_id}.wav")
                    write_wav(aug_dir / new.path, out)
                    records.append(new)
            save_manifest(aug_dir / "manifest.jsonl", records)
            taps = {k: v.taps for k, v in sorted(bank.rirs.items())}
            width = max((len(t) for t in taps.values()), default=1)
            save_vectors(rir_file, b"SVRI", {k: np.pad(t, (0, width - len(t))) for k, t in taps.items()})

        section = {"augmentation": self.cfg["augmentation"], "recipe": repr(self.recipe), "rate": self.rate}
        return self._run("augment", section, [self.corpus_dir], [aug_dir, rir_file], fn)

    def stage_sad(self) -> bool:
        feat = self.ws.path("features")
        outs = [feat / "sad.svfm", feat / "speech_seconds.json", feat / "train_manifest.jsonl"]
        aug_manifest = self.ws.path("augment", "manifest.jsonl")

        def fn():
            masks, secs = {}, {}
            for role in ("train", "dev", "eval"):
                for rec, path in self._records(self.corpus_file(role)):
                    m = energy_sad(self._audio(path), self.sad_cfg)
                    masks[rec.utt_id] = m.astype(np.float32)[:, None]
                    secs[rec.utt_id] = speech_seconds(m, self.mfcc.frame_shift_ms)
            save_matrices(outs[0], masks)
            _write_json(outs[1], secs)
            train = [r for r, _ in self._records(self.corpus_file("train"))]
            augmented = load_manifest(aug_manifest)
            kept = build_training_manifest(train, self.recipe, secs, augmented, seed=self.seed)
            save_manifest(outs[2], kept)

        section = {"frontend": self.cfg["frontend"], "recipe": repr(self.recipe)}
        return self._run("sad", section, [self.corpus_dir, aug_manifest], outs, fn)

    def _training_records(self) -> list[UtteranceRecord]:
        return load_manifest(self.ws.path("features", "train_manifest.jsonl"))

    def _audio_path(self, rec: UtteranceRecord) -> Path:
        if "source_utt_id" in rec.meta:
            return self.ws.path("augment", rec.path)
        return self.corpus_file("train").parent / rec.path

    def stage_features(self) -> bool:
        feat = self.ws.path("features")
        outs = [feat / f"{role}.svfm" for role in ("train", "dev", "eval")]
        wpe = bool(self.cfg["frontend"]["wpe"])

        def fn():
            jobs = {"train": [(r.utt_id, self._audio_path(r), False) for r in self._training_records()]}
            for role in ("dev", "eval"):
                jobs[role] = [(r.utt_id, p, wpe) for r, p in self._records(self.corpus_file(role))]
            for role, items in jobs.items():
                args = [(str(p), self.rate, self.mfcc, w) for _, p, w in items]
                if self.jobs > 1:
                    with ProcessPoolExecutor(self.jobs) as pool:
                        mats = list(pool.map(_feature_job, args, chunksize=4))
                else:
                    mats = [_feature_job(a) for a in args]
                save_matrices(feat / f"{role}.svfm", {u: m for (u, _, _), m in zip(items, mats)})

        inputs = [self.corpus_dir, self.ws.path("augment"), feat / "train_manifest.jsonl"]
        return self._run("features", {"frontend": self.cfg["frontend"]}, inputs, outs, fn)

    def _prepared(self, role: str, postprocess: str, records=None) -> dict[str, np.ndarray]:
        """Sliding CMN, SAD frame selection and optional CMVN, per utterance."""
        feats = load_matrices(self.ws.path("features", f"{role}.svfm"))
        masks = load_matrices(self.ws.path("features", "sad.svfm"))
        source = {}
        if records is not None:
            source = {r.utt_id: r.meta.get("source_utt_id", r.utt_id) for r in records}
        fe = self.cfg["frontend"]
        out = {}
        for utt, data in feats.items():
            mask = masks[source.get(utt, utt)][:, 0] > 0.5
            fm = apply_cmn_sliding(FeatureMatrix(data, self.mfcc.frame_shift_ms, utt), fe["cmn_window_s"])
            cmvn = "cmvn" in postprocess
            if cmvn and not fe["cmvn_after_sad"]:
                fm = apply_cmvn_global(fm)
            x = fm.data[mask] if mask.any() else fm.data
            if cmvn and fe["cmvn_after_sad"]:
                x = apply_cmvn_global(fm.with_data(x)).data
            out[utt] = x.astype(np.float32)
        return out

    def _arch(self, system: dict):
        return get_arch(system["arch"], input_dim=self.cfg["frontend"]["num_ceps"])

    def stage_train_extractor(self, name: str) -> bool:
        system = self.system(name)
        model, log_file = self.ws.path("models", f"{name}.svnn"), self.ws.path("models", f"{name}-train-log.json")
        feat = self.ws.path("features")

        def fn():
            records = self._training_records()
            arch = self._arch(system)
            feats = self._prepared("train", arch.postprocess, records)
            speakers = sorted({r.speaker_id for r in records})
            index = {s: i for i, s in enumerate(speakers)}
            utts = [r.utt_id for r in records]
            labels = [index[r.speaker_id] for r in records]
            cfg = TrainConfig(**system.get("train", {}))
            net, history = train_extractor(arch, [feats[u] for u in utts], labels, cfg, derive_seed(self.seed, "train", name))
            net.save(model)
            _write_json(log_file, {"system": name, "arch": arch.name, "speakers": len(speakers), "history": history})

        inputs = [feat / "train.svfm", feat / "sad.svfm", feat / "train_manifest.jsonl"]
        section = {"system": system, "frontend": self.cfg["frontend"]}
        return self._run(f"train-extractor:{name}", section, inputs, [model, log_file], fn)

    def stage_embed(self, name: str) -> bool:
        model = self.ws.path("models", f"{name}.svnn")
        outs = [self.ws.path("embeddings", f"{name}-{role}.sveb") for role in ("train", "dev", "eval")]
        feat = self.ws.path("features")

        def fn():
            net = Network.load(model)
            records = self._training_records()
            for role, out in zip(("train", "dev", "eval"), outs):
                feats = self._prepared(role, net.arch.postprocess, records if role == "train" else None)
                short = [u for u, f in feats.items() if f.shape[0] < net.arch.receptive_field]
                for u in short:
                    # too short for the network: repeat the frames
                    reps = -(-net.arch.receptive_field // max(1, feats[u].shape[0]))
                    feats[u] = np.tile(feats[u], (reps, 1))
                save_embeddings(out, extract_embeddings(net, feats))

        inputs = [model] + [feat / f"{r}.svfm" for r in ("train", "dev", "eval")] + [feat / "sad.svfm"]
        return self._run(f"embed:{name}", {"frontend": self.cfg["frontend"]}, inputs, outs, fn)

    def _backend_path(self, name: str) -> Path:
        suffix = "svcb" if self.cfg["backend"]["type"] == "csml" else "backend.json"
        return self.ws.path("models", f"{name}.{suffix}")

    def _scorer(self, name: str):
        if self.cfg["backend"]["type"] == "csml":
            return make_scorer("csml", CsmlModel.load(self._backend_path(name)))
        return make_scorer("cosine")

    def stage_train_backend(self, name: str) -> bool:
        emb = self.ws.path("embeddings", f"{name}-train.sveb")
        out = self._backend_path(name)

        def fn():
            if self.cfg["backend"]["type"] != "csml":
                _write_json(out, {"type": "cosine"})
                return
            embs = load_embeddings(emb)
            spk = {r.utt_id: r.speaker_id for r in self._training_records()}
            ids = list(embs)
            cfg = CsmlConfig(**self.cfg["backend"]["csml"])
            model = train_csml(embs.matrix(ids), [spk[u] for u in ids], cfg, derive_seed(self.seed, "csml", name) % (2**63))
            model.save(out)

        return self._run(f"train-backend:{name}", {"backend": self.cfg["backend"]}, [emb], [out], fn)

    def _keys(self) -> dict[str, TrialList]:
        return {role: load_trials(self.corpus_file(f"{role}_key")) for role in ("dev", "eval")}

    def stage_score(self, name: str) -> bool:
        outs = [self.ws.path("scores", f"{name}-{role}.raw") for role in ("dev", "eval")]
        embs = [self.ws.path("embeddings", f"{name}-{role}.sveb") for role in ("dev", "eval")]

        def fn():
            scorer = self._scorer(name)
            keys = self._keys()
            for role, emb, out in zip(("dev", "eval"), embs, outs):
                e = load_embeddings(emb)
                save_scores(out, score_trials(keys[role], e, e, scorer))

        inputs = embs + [self._backend_path(name), self.corpus_dir]
        return self._run(f"score:{name}", {"backend": self.cfg["backend"]["type"]}, inputs, outs, fn)

    def stage_normalize(self, name: str) -> bool:
        raws = [self.ws.path("scores", f"{name}-{role}.raw") for role in ("dev", "eval")]
        outs = [self.ws.path("scores", f"{name}-{role}.snorm") for role in ("dev", "eval")]
        embs = [self.ws.path("embeddings", f"{name}-{role}.sveb") for role in ("train", "dev", "eval")]
        cohort_file = self.cfg["cohort"]["file"]

        def fn():
            scorer = self._scorer(name)
            if cohort_file is not None:
                cohort_embs = load_embeddings(cohort_file)
            else:
                train = load_embeddings(embs[0])
                clean = {r.utt_id for r in self._training_records() if r.augmentation_tag == "clean"}
                cohort_embs = EmbeddingSet(train.dim, [(u, train[u]) for u in train if u in clean])
            cohort = CohortSet(cohort_embs, self.cfg["cohort"]["top_k"])
            for raw, emb, out in zip(raws, embs[1:], outs):
                e = load_embeddings(emb)
                normed = s_normalize(load_scores(raw), e, e, cohort, scorer, adaptive=self.cfg["cohort"]["adaptive"])
                save_scores(out, normed)

        inputs = raws + embs + [self._backend_path(name)]
        if cohort_file is not None:
            inputs.append(Path(cohort_file))
        return self._run(f"normalize:{name}", {"cohort": self.cfg["cohort"]}, inputs, outs, fn)

    def _snorm_paths(self, role: str) -> list[Path]:
        return [self.ws.path("scores", f"{s['name']}-{role}.snorm") for s in self.systems]

    def stage_fuse(self) -> bool:
        outs = [self.ws.path("scores", f"fused-{role}.scores") for role in ("dev", "eval")]

        def fn():
            model = FusionModel.equal(len(self.systems))
            for role, out in zip(("dev", "eval"), outs):
                save_scores(out, fuse([load_scores(p, "snorm") for p in self._snorm_paths(role)], model))

        inputs = self._snorm_paths("dev") + self._snorm_paths("eval")
        return self._run("fuse", {"systems": [s["name"] for s in self.systems]}, inputs, outs, fn)

    def _dcf(self) -> DcfParams:
        ev = self.cfg["evaluation"]
        return DcfParams(ev["p_target"], ev["c_miss"], ev["c_fa"])

    def stage_calibrate(self) -> bool:
        out, info = self.ws.path("scores", "final-eval.llr"), self.ws.path("models", "calibration.json")

        def fn():
            ev = self.cfg["evaluation"]
            dev_key = self._keys()["dev"]
            split = split_devset(dev_key, ev["split_seed"])
            dev = [load_scores(p, "snorm") for p in self._snorm_paths("dev")]
            evl = [load_scores(p, "snorm") for p in self._snorm_paths("eval")]
            result = run_strategy(ev["strategy"], dev, evl, split, self._dcf(), ev["calibration_prior"])
            save_scores(out, result.llr)
            _write_json(info, {"strategy": ev["strategy"], "systems": [s["name"] for s in self.systems], "branches": result.branches})

        inputs = self._snorm_paths("dev") + self._snorm_paths("eval") + [self.corpus_dir]
        return self._run("calibrate", {"evaluation": self.cfg["evaluation"]}, inputs, [out, info], fn)

    def stage_evaluate(self) -> bool:
        out, det = self.ws.path("reports", "report.json"), self.ws.path("reports", "det-final.csv")
        final = self.ws.path("scores", "final-eval.llr")
        fused = self.ws.path("scores", "fused-eval.scores")
        cal_info = self.ws.path("models", "calibration.json")

        def fn():
            key = self._keys()["eval"]
            params = self._dcf()
            # the strategy that produced the final scores, which may differ from the config's
            strategy = json.loads(cal_info.read_text())["strategy"]
            rep = {"strategy": strategy, "p_target": params.p_target, "systems": {}}
            labels = key.labels if key.key is not None else None

            def metrics(scores: ScoreSet, llr: bool) -> dict:
                if labels is None:
                    return {"n_trials": len(scores)}
                s = scores.aligned_to(key)
                return report(s.scores, labels, params, llr=llr)

            for s in self.systems:
                name = s["name"]
                rep["systems"][name] = {
                    "arch": s["arch"],
                    "raw": metrics(load_scores(self.ws.path("scores", f"{name}-eval.raw")), False),
                    "snorm": metrics(load_scores(self.ws.path("scores", f"{name}-eval.snorm"), "snorm"), False),
                }
            rep["fused_equal"] = metrics(load_scores(fused, "fused"), False)
            final_scores = load_scores(final, "llr")
            rep["final"] = metrics(final_scores, True)
            _write_json(out, rep)
            with open(det, "w", encoding="utf-8") as fh:
                fh.write("threshold,p_fa,p_miss\n")
                if labels is not None:
                    for t, f, m in det_points(final_scores.aligned_to(key).scores, labels):
                        fh.write(f"{t:.6f},{f:.6f},{m:.6f}\n")

        inputs = [final, fused, cal_info] + [self.ws.path("scores", f"{s['name']}-eval.{k}") for s in self.systems for k in ("raw", "snorm")]
        return self._run("evaluate", {"evaluation": self.cfg["evaluation"]}, inputs, [out, det], fn)

    # orchestration ---------------------------------------------------------

    def run_all(self) -> dict:
        self.stage_demo_corpus()
        self.stage_augment()
        self.stage_sad()
        self.stage_features()
        for s in self.systems:
            name = s["name"]
            self.stage_train_extractor(name)
            self.stage_embed(name)
            self.stage_train_backend(name)
            self.stage_score(name)
            self.stage_normalize(name)
        self.stage_fuse()
        self.stage_calibrate()
        self.stage_evaluate()
        return json.loads(self.ws.path("reports", "report.json").read_text())


def run_all(config=None, workspace="workspace", force: bool = False, jobs: int = 1, overrides: dict | None = None) -> dict:
    """Run every stage for ``config`` (a path, a dict or None for the defaults)."""
    if isinstance(config, dict):
        cfg = load_config(None, config)
    else:
        cfg = load_config(config, overrides)
    return Experiment(cfg, workspace, force=force, jobs=jobs).run_all()
