"""End-to-end data flow: corpus synthesis, persistence, evaluation worlds.

Everything is derived from explicit seeds; writing the same configuration
twice produces byte-identical directories.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attribution import AttributedTranscript, attribute_recording
from .config import ExperimentConfig
from .cpwer import cpwer, min_cost_assignment
from .errors import DataError
from .mixer import (
    EmbeddingOracle,
    MixedSample,
    Turn,
    TurnGroup,
    assemble_sample,
    augment_noise,
    group_similar,
    load_turn_manifest,
    make_turn_library,
    save_turn_manifest,
    validate_sample,
)
from .model import SpeakerModule
from .world import AcousticFeatures, SyntheticWorld, load_features, save_features


@dataclass
class Corpus:
    world: SyntheticWorld
    turns: list[Turn]
    feats_by_id: dict[str, AcousticFeatures]
    groups: list[TurnGroup]
    samples: list[MixedSample]

    @property
    def turns_by_id(self) -> dict[str, Turn]:
        return {t.id: t for t in self.turns}


def build_corpus(config: ExperimentConfig) -> Corpus:
    """Turn library -> weak labels -> groups -> mixed samples (+noise)."""
    world = config.build_world()
    oracle = config.build_oracle(world)
    turns, feats_by_id = make_turn_library(world, oracle, config.mixer, seed=config.seeds.corpus)
    groups = group_similar(turns, config.mixer.threshold, seed=config.seeds.grouping)
    turns_by_id = {t.id: t for t in turns}
    samples = []
    for i in range(config.data.train_samples):
        sample = assemble_sample(
            groups,
            turns_by_id,
            feats_by_id,
            config.mixer,
            seed=config.seeds.sampling * 1_000_003 + i,
            sample_id=f"sample_{i:06d}",
        )
        if config.mixer.noise_level > 0:
            sample = augment_noise(
                sample, config.mixer.noise_level, seed=config.seeds.sampling * 2_000_003 + i
            )
        samples.append(sample)
    return Corpus(world=world, turns=turns, feats_by_id=feats_by_id, groups=groups, samples=samples)


def save_corpus(corpus: Corpus, out_dir: str | Path, config: ExperimentConfig) -> None:
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    save_turn_manifest(out / "turns.jsonl", corpus.turns)
    for turn in corpus.turns:
        save_features(out / "features" / f"turn_{turn.id}.f32", corpus.feats_by_id[turn.id])
    with open(out / "samples.jsonl", "w") as fh:
        for s in corpus.samples:
            fh.write(
                json.dumps(
                    {
                        "id": s.id,
                        "tokens": [int(t) for t in s.tokens],
                        "turn_spans": [[int(a), int(b), tid] for a, b, tid in s.turn_spans],
                        "group_count": s.group_count,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
            save_features(out / "features" / f"{s.id}.f32", s.features)


def load_corpus(data_dir: str | Path, config: ExperimentConfig) -> Corpus:
    data = Path(data_dir)
    if not (data / "samples.jsonl").exists():
        raise DataError(f"no corpus at {data} (missing samples.jsonl)")
    world = config.build_world()
    turns = load_turn_manifest(data / "turns.jsonl")
    turns_by_id = {t.id: t for t in turns}
    feats_by_id = {
        t.id: load_features(data / "features" / f"turn_{t.id}.f32") for t in turns
    }
    samples = []
    for line in (data / "samples.jsonl").read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        feats = load_features(data / "features" / f"{obj['id']}.f32")
        tokens = np.asarray(obj["tokens"], dtype=np.int64)
        spans = [(int(a), int(b), tid) for a, b, tid in obj["turn_spans"]]
        targets = np.vstack(
            [np.tile(turns_by_id[tid].embedding, (b - a, 1)) for a, b, tid in spans]
        )
        speakers = np.concatenate(
            [np.repeat(turns_by_id[tid].speaker_ref, b - a) for a, b, tid in spans]
        )
        samples.append(
            MixedSample(
                id=obj["id"],
                features=feats,
                tokens=tokens,
                targets=targets,
                mask=np.ones(len(tokens), dtype=bool),
                turn_spans=spans,
                group_count=int(obj["group_count"]),
                _token_speakers=speakers,
            )
        )
    groups = group_similar(turns, config.mixer.threshold, seed=config.seeds.grouping)
    return Corpus(world=world, turns=turns, feats_by_id=feats_by_id, groups=groups, samples=samples)


def corpus_fingerprint(data_dir: str | Path) -> str:
    """SHA-256 over every file in the corpus directory, path-ordered."""
    data = Path(data_dir)
    h = hashlib.sha256()
    for path in sorted(p for p in data.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(data)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def validate_corpus(corpus: Corpus, config: ExperimentConfig) -> int:
    """Run every sample invariant; returns the number of samples checked."""
    turns_by_id = corpus.turns_by_id
    for sample in corpus.samples:
        validate_sample(sample, turns_by_id, config.mixer)
    return len(corpus.samples)


@dataclass
class EvalRecording:
    id: str
    features: AcousticFeatures
    gold_tokens: list[int]
    token_speakers: list[str]
    n_speakers: int

    def reference_streams(self) -> dict[str, list[int]]:
        streams: dict[str, list[int]] = {}
        for tok, spk in zip(self.gold_tokens, self.token_speakers):
            streams.setdefault(spk, []).append(tok)
        return streams


def make_eval_recordings(
    world: SyntheticWorld, config: ExperimentConfig, count: int | None = None
) -> list[EvalRecording]:
    """Held-out multi-speaker recordings with planted per-token labels."""
    data = config.data
    n = data.eval_recordings if count is None else count
    recordings = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([config.seeds.eval, i]))
        k = int(rng.integers(data.eval_min_speakers, data.eval_max_speakers + 1))
        speakers = rng.choice(world.num_speakers, size=k, replace=False)
        turns: list[tuple[int, list[int]]] = []
        for spk in speakers:
            n_turns = int(
                rng.integers(data.eval_min_turns_per_speaker, data.eval_max_turns_per_speaker + 1)
            )
            for _ in range(n_turns):
                n_tok = int(rng.integers(config.mixer.min_turn_tokens, config.mixer.max_turn_tokens + 1))
                turns.append((int(spk), rng.integers(0, world.vocab_size, size=n_tok).tolist()))
        order = rng.permutation(len(turns))
        blocks = []
        gold: list[int] = []
        labels: list[str] = []
        for j, idx in enumerate(order):
            spk, tokens = turns[idx]
            feats, turn = world.synth_turn(spk, tokens, salt=1_000_000 + i * 1000 + j)
            blocks.append(feats.values)
            gold.extend(tokens)
            labels.extend([turn.speaker_ref] * len(tokens))
        recordings.append(
            EvalRecording(
                id=f"rec_{i:05d}",
                features=AcousticFeatures(np.concatenate(blocks), world.frame_duration_s),
                gold_tokens=gold,
                token_speakers=labels,
                n_speakers=k,
            )
        )
    return recordings


def save_eval_recordings(recordings: list[EvalRecording], out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "recordings.jsonl", "w") as fh:
        for rec in recordings:
            save_features(
                out / f"{rec.id}.f32",
                rec.features,
                extra={
                    "gold_tokens": rec.gold_tokens,
                    "token_speakers": rec.token_speakers,
                    "n_speakers": rec.n_speakers,
                },
            )
            fh.write(
                json.dumps(
                    {
                        "id": rec.id,
                        "file": f"{rec.id}.f32",
                        "gold_tokens": rec.gold_tokens,
                        "token_speakers": rec.token_speakers,
                        "n_speakers": rec.n_speakers,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_eval_recordings(data_dir: str | Path) -> list[EvalRecording]:
    data = Path(data_dir)
    manifest = data / "recordings.jsonl"
    if not manifest.exists():
        raise DataError(f"no recordings manifest at {manifest}")
    out = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        out.append(
            EvalRecording(
                id=obj["id"],
                features=load_features(data / obj["file"]),
                gold_tokens=[int(t) for t in obj["gold_tokens"]],
                token_speakers=[str(s) for s in obj["token_speakers"]],
                n_speakers=int(obj["n_speakers"]),
            )
        )
    return out


def attribution_accuracy(transcript: AttributedTranscript, token_speakers: list[str]) -> float:
    """Fraction of tokens in the correct stream under the best
    cluster-to-speaker matching (maximum-agreement square assignment)."""
    truth_keys = sorted(set(token_speakers))
    truth_index = {k: i for i, k in enumerate(truth_keys)}
    n_true = len(truth_keys)
    n_pred = max(transcript.k, 1)
    size = max(n_true, n_pred)
    counts = np.zeros((size, size))
    for stream in transcript.speakers:
        for pos in stream.positions:
            counts[stream.id, truth_index[token_speakers[pos]]] += 1
    perm = min_cost_assignment(-counts)
    matched = sum(counts[i, perm[i]] for i in range(size))
    return float(matched) / float(len(token_speakers))


def evaluate_module(
    module: SpeakerModule,
    world: SyntheticWorld,
    recordings: list[EvalRecording],
    gold_tokens: bool = True,
    k_hint: int | None = None,
    seed: int = 0,
    config_hash: str = "",
) -> dict:
    """Attribution accuracy and cpWER over a recording set.

    Pooled figures aggregate over tokens/words; mean figures average the
    per-recording values.
    """
    accs = []
    cpwers = []
    err_words = 0
    ref_words = 0
    k_exact = 0
    for rec in recordings:
        transcript = attribute_recording(
            module,
            world,
            rec.features,
            gold_tokens=rec.gold_tokens if gold_tokens else None,
            k_hint=k_hint,
            seed=seed,
            config_hash=config_hash,
        )
        accs.append(attribution_accuracy(transcript, rec.token_speakers))
        report = cpwer(rec.reference_streams(), transcript.stream_map())
        cpwers.append(report.cpwer)
        errors = report.substitutions + report.insertions + report.deletions
        err_words += errors
        ref_words += report.total_reference_words
        if transcript.k == rec.n_speakers:
            k_exact += 1
    n_tokens = [len(r.gold_tokens) for r in recordings]
    total_tokens = float(sum(n_tokens))
    pooled_acc = float(np.dot(accs, n_tokens) / total_tokens)
    return {
        "recordings": len(recordings),
        "mode": "gold" if gold_tokens else "decoded",
        "attribution_accuracy_pooled": pooled_acc,
        "attribution_accuracy_mean": float(np.mean(accs)),
        "cpwer_pooled": err_words / ref_words,
        "cpwer_mean": float(np.mean(cpwers)),
        "speaker_count_exact_rate": k_exact / len(recordings),
    }
