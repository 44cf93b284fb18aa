"""Weak-label training-sample construction from single-speaker turns.

Turns are embedded by a frozen surrogate of a pretrained speaker-embedding
model, grouped by cosine similarity above a threshold, and concatenated into
multi-speaker samples. Every turn in a sample has at least one same-group
counterpart, a sample holds at most five groups and thirty seconds of
non-overlapping speech, and the per-token target sequence repeats each
turn's weak embedding across that turn's tokens.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DegenerateInputError
from .world import AcousticFeatures, SyntheticWorld, Turn

_SALT_ORACLE = 11
_SALT_GROUPING = 12
_SALT_ASSEMBLY = 13
_SALT_NOISE = 14


def _rng(*entropy) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(entropy)))


class EmbeddingOracle:
    """Frozen turn-level speaker embedder.

    Stands in for a pretrained embedding model: it strips the linguistic
    content it can decode from each token window, averages the residual
    (which is dominated by the speaker signature), and applies a fixed
    random projection followed by L2 normalization.
    """

    def __init__(self, world: SyntheticWorld, output_dim: int = 16, seed: int | None = None):
        self.world = world
        self.output_dim = output_dim
        self.seed = world.seed if seed is None else seed
        rng = _rng(self.seed, _SALT_ORACLE)
        if world.num_speakers <= output_dim:
            # isometric on the signature span: distinct speakers map to
            # orthogonal embeddings, matching the separation quality of the
            # pretrained embedder this stands in for
            basis, _ = np.linalg.qr(rng.normal(size=(output_dim, world.num_speakers)))
            self.projection = basis @ world.signatures
        else:
            self.projection = rng.normal(size=(output_dim, world.feature_dim)) / np.sqrt(
                world.feature_dim
            )

    def embed_turn(self, feats: AcousticFeatures) -> np.ndarray:
        """Deterministic unit vector summarizing the turn's speaker."""
        means = self.world.window_means(feats)
        tokens, _ = self.world.decode_windows(feats)
        residual = (means - self.world.contents[tokens]).mean(axis=0)
        vec = self.projection @ residual
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise DegenerateInputError("turn embedding collapsed to zero norm")
        return vec / norm


@dataclass
class MixerConfig:
    threshold: float = 0.7
    max_groups: int = 5
    max_duration_s: float = 30.0
    noise_level: float = 0.02
    seed: int = 0
    turns_per_speaker: int = 24
    min_turn_tokens: int = 4
    max_turn_tokens: int = 11

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold must lie strictly between 0 and 1")
        if self.noise_level < 0:
            raise ConfigError("noise level must be nonnegative")
        if self.min_turn_tokens < 1 or self.max_turn_tokens < self.min_turn_tokens:
            raise ConfigError("bad turn token range")


@dataclass
class TurnGroup:
    seed_turn: str
    member_ids: list[str]
    representative: np.ndarray

    def __len__(self) -> int:
        return len(self.member_ids)


@dataclass
class MixedSample:
    """One training sample. True speaker labels are reachable only through
    the evaluation-only accessor; the training path never touches them."""

    id: str
    features: AcousticFeatures
    tokens: np.ndarray
    targets: np.ndarray
    mask: np.ndarray
    turn_spans: list[tuple[int, int, str]]
    group_count: int
    _token_speakers: np.ndarray = field(repr=False, default=None)

    @property
    def duration_s(self) -> float:
        return self.features.duration_s

    def speaker_labels_for_eval(self) -> np.ndarray:
        """Per-token ground-truth speaker refs. Evaluation only."""
        return self._token_speakers.copy()


def make_turn_library(
    world: SyntheticWorld, oracle: EmbeddingOracle, config: MixerConfig, seed: int
) -> tuple[list[Turn], dict[str, AcousticFeatures]]:
    """Render turns_per_speaker turns for every world speaker and attach
    weak-label embeddings."""
    rng = _rng(seed, 0)
    turns: list[Turn] = []
    feats_by_id: dict[str, AcousticFeatures] = {}
    salt = 0
    for spk in range(world.num_speakers):
        for _ in range(config.turns_per_speaker):
            n_tok = int(rng.integers(config.min_turn_tokens, config.max_turn_tokens + 1))
            tokens = rng.integers(0, world.vocab_size, size=n_tok).tolist()
            feats, turn = world.synth_turn(spk, tokens, salt=salt)
            salt += 1
            turn.embedding = oracle.embed_turn(feats)
            turns.append(turn)
            feats_by_id[turn.id] = feats
    return turns, feats_by_id


def group_similar(turns: list[Turn], threshold: float, seed: int = 0) -> list[TurnGroup]:
    """Greedy seeded grouping: visiting turns in random order, a turn joins
    the first group whose seed turn it matches at or above the threshold,
    otherwise it starts a new group. Non-transitive by construction."""
    if not turns:
        raise DataError("cannot group an empty turn list")
    for t in turns:
        if t.embedding is None:
            raise DataError(f"turn {t.id} has no weak embedding")
    order = _rng(seed, _SALT_GROUPING).permutation(len(turns))
    groups: list[TurnGroup] = []
    for idx in order:
        turn = turns[idx]
        placed = False
        for g in groups:
            if float(np.dot(turn.embedding, g.representative)) >= threshold:
                g.member_ids.append(turn.id)
                placed = True
                break
        if not placed:
            groups.append(
                TurnGroup(seed_turn=turn.id, member_ids=[turn.id], representative=turn.embedding)
            )
    return groups


def assemble_sample(
    groups: list[TurnGroup],
    turns_by_id: dict[str, Turn],
    feats_by_id: dict[str, AcousticFeatures],
    config: MixerConfig,
    seed: int,
    sample_id: str = "sample",
) -> MixedSample:
    """Pick dissimilar groups, take 2-3 turns from each, shuffle and
    concatenate. Raises when no group can contribute a counterpart pair."""
    rng = _rng(seed, _SALT_ASSEMBLY)
    eligible = [g for g in groups if len(g) >= 2]
    if not eligible:
        raise DataError("no turn group with at least two members; cannot pair turns")
    order = rng.permutation(len(eligible))
    # distinct-speaker count per sample, mean 2.5 over the 1..5 range
    counts = np.arange(1, config.max_groups + 1)
    weights = np.array([0.3, 0.25, 0.2, 0.15, 0.1][: len(counts)])
    want_groups = int(rng.choice(counts, p=weights / weights.sum()))

    chosen: list[TurnGroup] = []
    chosen_turns: list[Turn] = []
    budget = config.max_duration_s
    for gi in order:
        if len(chosen) == want_groups:
            break
        group = eligible[gi]
        if any(
            float(np.dot(group.representative, c.representative)) >= config.threshold
            for c in chosen
        ):
            continue
        members = [turns_by_id[i] for i in group.member_ids]
        take = [members[i] for i in rng.permutation(len(members))[:3]]
        pair, extra = take[:2], take[2:]
        pair_time = sum(t.duration_s for t in pair)
        if pair_time > budget:
            continue
        picked = list(pair)
        budget -= pair_time
        if extra and rng.random() < 1.0 / 3.0 and extra[0].duration_s <= budget:
            picked.append(extra[0])
            budget -= extra[0].duration_s
        chosen.append(group)
        chosen_turns.extend(picked)
    if not chosen:
        raise DataError("duration budget cannot fit any counterpart pair")

    chosen_turns = [chosen_turns[i] for i in rng.permutation(len(chosen_turns))]
    frame_dur = feats_by_id[chosen_turns[0].id].frame_duration_s
    feature_blocks = []
    tokens: list[int] = []
    targets: list[np.ndarray] = []
    speakers: list[str] = []
    spans: list[tuple[int, int, str]] = []
    for turn in chosen_turns:
        start = len(tokens)
        feature_blocks.append(feats_by_id[turn.id].values)
        tokens.extend(turn.token_ids)
        targets.extend([turn.embedding] * len(turn.token_ids))
        speakers.extend([turn.speaker_ref] * len(turn.token_ids))
        spans.append((start, len(tokens), turn.id))
    return MixedSample(
        id=sample_id,
        features=AcousticFeatures(np.concatenate(feature_blocks, axis=0), frame_dur),
        tokens=np.asarray(tokens, dtype=np.int64),
        targets=np.vstack(targets),
        mask=np.ones(len(tokens), dtype=bool),
        turn_spans=spans,
        group_count=len(chosen),
        _token_speakers=np.asarray(speakers),
    )


def augment_noise(sample: MixedSample, level: float, seed: int) -> MixedSample:
    """Additive Gaussian noise on features only; exact identity at level 0."""
    if level < 0:
        raise ConfigError("noise level must be nonnegative")
    if level == 0:
        values = sample.features.values.copy()
    else:
        rng = _rng(seed, _SALT_NOISE)
        values = sample.features.values + level * rng.standard_normal(
            sample.features.values.shape
        )
    return MixedSample(
        id=sample.id,
        features=AcousticFeatures(values, sample.features.frame_duration_s),
        tokens=sample.tokens.copy(),
        targets=sample.targets.copy(),
        mask=sample.mask.copy(),
        turn_spans=list(sample.turn_spans),
        group_count=sample.group_count,
        _token_speakers=sample._token_speakers.copy(),
    )


def validate_sample(sample: MixedSample, turns_by_id: dict[str, Turn], config: MixerConfig) -> None:
    """Assert every structural sample invariant; raises DataError on violation."""
    if sample.group_count > config.max_groups:
        raise DataError(f"{sample.id}: {sample.group_count} groups exceeds cap")
    if sample.duration_s > config.max_duration_s + 1e-9:
        raise DataError(f"{sample.id}: duration {sample.duration_s:.2f}s exceeds cap")
    turn_ids = [tid for _, _, tid in sample.turn_spans]
    labels = sample.speaker_labels_for_eval()
    for start, end, tid in sample.turn_spans:
        turn = turns_by_id[tid]
        if list(sample.tokens[start:end]) != list(turn.token_ids):
            raise DataError(f"{sample.id}: token block mismatch for turn {tid}")
        if not np.array_equal(
            sample.targets[start:end], np.tile(turn.embedding, (end - start, 1))
        ):
            raise DataError(f"{sample.id}: target rows do not equal the turn embedding")
        if not all(labels[start:end] == turn.speaker_ref):
            raise DataError(f"{sample.id}: speaker label block mismatch")
    if len(set(turn_ids)) != len(turn_ids):
        raise DataError(f"{sample.id}: a turn appears twice")
    spans_sorted = sorted(sample.turn_spans)
    pos = 0
    for start, end, _ in spans_sorted:
        if start != pos:
            raise DataError(f"{sample.id}: turn spans do not tile the token sequence")
        pos = end
    if pos != len(sample.tokens):
        raise DataError(f"{sample.id}: spans do not cover all tokens")


def counterpart_rule_holds(
    sample: MixedSample, turns_by_id: dict[str, Turn], groups: list[TurnGroup]
) -> bool:
    """True when every turn in the sample has a same-group companion."""
    group_of: dict[str, int] = {}
    for gi, g in enumerate(groups):
        for tid in g.member_ids:
            group_of[tid] = gi
    present = [tid for _, _, tid in sample.turn_spans]
    for tid in present:
        gi = group_of[tid]
        if not any(other != tid and group_of[other] == gi for other in present):
            return False
    return True


def save_turn_manifest(path: str | Path, turns: list[Turn]) -> None:
    """JSON Lines, one turn per line; speaker_ref is evaluation-only."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for t in turns:
            fh.write(
                json.dumps(
                    {
                        "id": t.id,
                        "tokens": [int(x) for x in t.token_ids],
                        "duration_s": t.duration_s,
                        "embedding": [float(x) for x in t.embedding],
                        "speaker_ref": t.speaker_ref,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_turn_manifest(path: str | Path) -> list[Turn]:
    turns = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        turns.append(
            Turn(
                id=obj["id"],
                token_ids=[int(x) for x in obj["tokens"]],
                duration_s=float(obj["duration_s"]),
                speaker_ref=obj["speaker_ref"],
                embedding=np.asarray(obj["embedding"], dtype=np.float64),
            )
        )
    return turns
