"""Command-line entry point: ``spkver <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .corpus import AudioBuffer, load_key, load_scores, write_wav
from .evaluation import DcfParams, det_points, report

STAGE_COMMANDS = (
    "demo-corpus",
    "augment",
    "sad",
    "features",
    "train-extractor",
    "embed",
    "train-backend",
    "score",
    "normalize",
    "fuse",
    "calibrate",
    "evaluate",
    "run-all",
)
PER_SYSTEM = {"train-extractor", "embed", "train-backend", "score", "normalize"}


def _overrides(args) -> dict:
    out: dict = {}
    if args.seed is not None:
        out["seed"] = args.seed
    if getattr(args, "recipe", None):
        out.setdefault("augmentation", {})["recipe"] = args.recipe
    if getattr(args, "backend", None):
        out["backend"] = {"type": args.backend}
    if getattr(args, "cohort", None):
        out.setdefault("cohort", {})["file"] = args.cohort
    if getattr(args, "top_k", None) is not None:
        out.setdefault("cohort", {})["top_k"] = args.top_k
    if getattr(args, "strategy", None):
        out.setdefault("evaluation", {})["strategy"] = args.strategy
    return out


def _experiment(args):
    from .pipeline import Experiment, load_config

    cfg = load_config(args.config, _overrides(args))
    if getattr(args, "arch", None):
        if not args.system or len(args.system) != 1:
            raise SystemExit("--arch needs exactly one --system")
        for s in cfg["systems"]:
            if s["name"] == args.system[0]:
                s["arch"] = args.arch
        from .pipeline.config import validate

        validate(cfg)
    return Experiment(cfg, args.workspace, force=args.force, jobs=args.jobs)


def _standalone_evaluate(args) -> int:
    key = load_key(args.key)
    scores = load_scores(args.scores).aligned_to(key)
    params = DcfParams(args.p_target, args.c_miss, args.c_fa)
    rep = report(scores.scores, key.labels, params, llr=True)
    text = json.dumps(rep, indent=2, sort_keys=True)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    if args.det:
        with open(args.det, "w", encoding="utf-8") as fh:
            fh.write("threshold,p_fa,p_miss\n")
            for t, f, m in det_points(scores.scores, key.labels):
                fh.write(f"{t:.6f},{f:.6f},{m:.6f}\n")
    return 0


def _simulate_rir(args) -> int:
    from .acoustics import RoomSpec, generate_rir, schroeder_t60

    room = RoomSpec(tuple(args.room), args.beta, sample_rate=args.rate)
    rir = generate_rir(room, args.src, args.mic, args.max_order, args.length, None, args.highpass)
    peak = np.max(np.abs(rir.taps))
    write_wav(args.out, AudioBuffer(rir.taps / peak * 0.9, args.rate))
    try:
        t60 = f"{schroeder_t60(rir):.3f} s"
    except ValueError:
        t60 = "n/a (decay too short to fit)"
    print(f"wrote {args.out}: {len(rir.taps)} taps, T60 {t60}, Sabine {room.sabine_t60():.3f} s")
    return 0


def _run_stage(args) -> int:
    exp = _experiment(args)
    cmd = args.command
    if cmd == "run-all":
        rep = exp.run_all()
        print(json.dumps(rep, indent=2, sort_keys=True))
        return 0
    if cmd in PER_SYSTEM:
        names = args.system or [s["name"] for s in exp.systems]
        method = getattr(exp, "stage_" + cmd.replace("-", "_"))
        for name in names:
            ran = method(name)
            print(f"{cmd}:{name}: {'done' if ran else 'up to date'}")
        return 0
    ran = getattr(exp, "stage_" + cmd.replace("-", "_"))()
    print(f"{cmd}: {'done' if ran else 'up to date'}")
    if cmd == "evaluate":
        print(exp.ws.path("reports", "report.json").read_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON (defaults are used when omitted)")
    common.add_argument("--workspace", default="workspace", help="artifact root (default: ./workspace)")
    common.add_argument("--seed", type=int, help="override the global seed")
    common.add_argument("--force", action="store_true", help="rerun stages even when up to date")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for feature extraction")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="spkver", description="Speaker verification experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def stage(name, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name in PER_SYSTEM:
            p.add_argument("--system", action="append", help="system name (repeatable; default all)")
        return p

    stage("demo-corpus", "generate the synthetic demo corpus into the workspace")
    stage("augment", "reverberated and noisy copies of the training audio").add_argument(
        "--recipe", choices=["fixdata1", "fixdata2", "fixdata3", "opendata4"]
    )
    stage("sad", "energy SAD masks and the filtered training manifest")
    stage("features", "MFCCs for training, development and evaluation audio")
    stage("train-extractor", "train embedding extractors").add_argument("--arch", help="architecture preset name")
    stage("embed", "extract embeddings")
    stage("train-backend", "train the CSML back-end")
    stage("score", "score the trial lists").add_argument("--backend", choices=["cosine", "csml"])
    p = stage("normalize", "s-norm the raw scores")
    p.add_argument("--cohort", help="cohort embeddings file (default: clean training embeddings)")
    p.add_argument("--top-k", type=int, dest="top_k")
    stage("fuse", "equal-weight fusion of the normalised scores")
    stage("calibrate", "fusion and calibration with a development split strategy").add_argument(
        "--strategy", choices=["Fixed1", "Fixed2", "Fixed3", "Open1", "Open2", "Open3"]
    )
    p = stage("evaluate", "metrics report; standalone with --scores and --key")
    p.add_argument("--scores", help="score file to evaluate instead of the workspace output")
    p.add_argument("--key", help="trial key for --scores")
    p.add_argument("--det", help="write DET points (threshold,p_fa,p_miss) as CSV")
    p.add_argument("--output", help="also write the JSON report here")
    p.add_argument("--p-target", type=float, default=0.01, dest="p_target")
    p.add_argument("--c-miss", type=float, default=1.0, dest="c_miss")
    p.add_argument("--c-fa", type=float, default=1.0, dest="c_fa")
    stage("run-all", "run every stage")

    p = sub.add_parser("simulate-rir", help="write one image-method RIR as a wav and report its T60")
    p.add_argument("--room", type=float, nargs=3, required=True, metavar=("LX", "LY", "LZ"))
    p.add_argument("--beta", type=float, required=True, help="wall reflection coefficient")
    p.add_argument("--src", type=float, nargs=3, required=True)
    p.add_argument("--mic", type=float, nargs=3, required=True)
    p.add_argument("--rate", type=int, default=16000)
    p.add_argument("--max-order", type=int, default=30, dest="max_order")
    p.add_argument("--length", type=float, default=1.0, help="seconds")
    p.add_argument("--highpass", type=float, default=None, help="high-pass cutoff in Hz")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    from .pipeline import ConfigError, StageError

    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "simulate-rir":
            return _simulate_rir(args)
        if args.command == "evaluate" and args.scores:
            if not args.key:
                raise SystemExit("evaluate --scores needs --key")
            return _standalone_evaluate(args)
        return _run_stage(args)
    except (ConfigError, StageError, ValueError, KeyError, OSError) as exc:
        print(f"spkver {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
