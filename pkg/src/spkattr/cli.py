"""Command-line entry point.

Subcommands: synth | train | infer | eval | verify.
Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .attribution import attribute_recording
from .config import ExperimentConfig
from .cpwer import cpwer, load_transcript_streams
from .errors import ConfigError, DataError, NumericError
from .model import load_checkpoint
from .pipeline import (
    build_corpus,
    corpus_fingerprint,
    load_corpus,
    make_eval_recordings,
    save_corpus,
    save_eval_recordings,
    validate_corpus,
)
from .train import train
from .verify import run_all
from .world import load_features, load_sidecar

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        config = ExperimentConfig.load(args.config)
    else:
        config = ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        config = config.with_master_seed(args.seed)
    return config


def _emit(args, payload: dict, human: list[str]) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        for line in human:
            print(line)


def cmd_synth(args) -> int:
    config = _load_config(args)
    out = Path(args.out)
    corpus = build_corpus(config)
    validate_corpus(corpus, config)
    save_corpus(corpus, out, config)
    recordings = make_eval_recordings(corpus.world, config)
    save_eval_recordings(recordings, out / "eval")
    fingerprint = corpus_fingerprint(out)
    payload = {
        "out": str(out),
        "config_hash": config.config_hash(),
        "train_samples": len(corpus.samples),
        "eval_recordings": len(recordings),
        "turns": len(corpus.turns),
        "fingerprint": fingerprint,
    }
    _emit(
        args,
        payload,
        [
            f"corpus written to {out}",
            f"  turns: {len(corpus.turns)}  samples: {len(corpus.samples)}  eval recordings: {len(recordings)}",
            f"  config hash: {config.config_hash()}",
            f"  fingerprint: {fingerprint}",
        ],
    )
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args)
    corpus = load_corpus(args.data, config)
    result = train(
        config,
        corpus,
        args.out,
        resume_from=args.resume,
        eval_every=args.eval_every,
    )
    payload = {
        "checkpoint": str(result.checkpoint_path),
        "steps": result.steps_run,
        "final_loss": result.final_loss,
        "asr_hash_unchanged": result.asr_hash_before == result.asr_hash_after,
        "config_hash": config.config_hash(),
    }
    _emit(
        args,
        payload,
        [
            f"trained {result.steps_run} steps -> {result.checkpoint_path}",
            f"  final loss: {result.final_loss:.4f}",
            f"  frozen recognizer unchanged: {payload['asr_hash_unchanged']}",
        ],
    )
    return EXIT_OK


def cmd_infer(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    if args.config:
        config = _load_config(args)
        if ck.world_config != config.to_dict()["world"]:
            raise ConfigError(
                "checkpoint was trained against a different world configuration; refusing to attribute"
            )
        world = config.build_world()
    else:
        if ck.world_config is None:
            raise ConfigError("checkpoint carries no world configuration; pass --config")
        from .config import WorldSettings

        world = WorldSettings(**ck.world_config).build()
    module = ck.build_module()
    feats = load_features(args.recording)
    gold = None
    if args.gold_tokens:
        sidecar = load_sidecar(Path(args.recording))
        gold = sidecar.get("gold_tokens")
        if gold is None:
            raise DataError(f"{args.recording}: sidecar has no gold_tokens")
    transcript = attribute_recording(
        module,
        world,
        feats,
        gold_tokens=gold,
        k_hint=args.num_speakers,
        seed=args.seed if args.seed is not None else 0,
        config_hash=(ck.metrics or {}).get("config_hash", ""),
    )
    if args.out:
        transcript.save(args.out)
    payload = json.loads(transcript.to_json())
    _emit(
        args,
        payload,
        [
            f"attributed {sum(len(s.tokens) for s in transcript.speakers)} tokens "
            f"to {transcript.k} speakers" + (f" -> {args.out}" if args.out else ""),
        ],
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    ref = load_transcript_streams(args.ref)
    hyp = load_transcript_streams(args.hyp)
    report = cpwer(ref, hyp)
    if args.out:
        Path(args.out).write_text(report.to_json())
    payload = json.loads(report.to_json())
    _emit(
        args,
        payload,
        [
            f"cpWER: {report.cpwer:.4f} "
            f"(S={report.substitutions} I={report.insertions} D={report.deletions} "
            f"/ {report.total_reference_words} ref words)",
        ],
    )
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_all(fast=args.fast)
    all_passed = all(r.passed for r in results)
    payload = {
        "passed": all_passed,
        "suites": [{"name": r.name, "passed": r.passed, "detail": r.detail} for r in results],
    }
    lines = [
        f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}" for r in results
    ] + [f"verify: {'all suites passed' if all_passed else 'FAILURES PRESENT'}"]
    _emit(args, payload, lines)
    return EXIT_OK if all_passed else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spkattr",
        description="Speaker attribution on a frozen recognizer: data synthesis, training, inference, scoring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic corpus and eval recordings")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--out", default="corpus", help="output directory")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the speaker module on a synthesized corpus")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--data", required=True, help="corpus directory from synth")
    p.add_argument("--out", default="run", help="output directory for checkpoint and log")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--eval-every", type=int, default=0, help="dev-eval cadence in steps (0 = off)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="attribute a recording with a trained checkpoint")
    p.add_argument("--config", help="experiment config JSON (cross-checked against checkpoint)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--recording", required=True, help="feature binary (.f32 with sidecar)")
    p.add_argument("--gold-tokens", action="store_true", help="use sidecar gold tokens, skip decoding")
    p.add_argument("--num-speakers", type=int, help="fix the speaker count instead of eigengap")
    p.add_argument("--seed", type=int, help="clustering seed")
    p.add_argument("--out", help="write transcript JSON here")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score a hypothesis transcript against a reference")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--out", help="write report JSON here")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the self-check battery")
    p.add_argument("--fast", action="store_true", help="reduced case counts")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
