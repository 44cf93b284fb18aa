"""Inference-time speaker assignment.

Long streams are cut into fixed-length chunks, each chunk runs through the
frozen recognizer and the speaker module, and the pooled token embeddings
are clustered once, globally, by spectral clustering on a clipped-cosine
affinity. Cluster count comes from the largest eigengap of the normalized
Laplacian spectrum unless a speaker count is supplied.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DegenerateInputError, ShapeError
from .model import SpeakerModule, attribute_tokens
from .world import AcousticFeatures, SyntheticWorld

SYMMETRY_TOL = 1e-8
DEFAULT_MAX_SPEAKERS = 10


def chunk_stream(
    feats: AcousticFeatures, max_chunk_s: float = 30.0, align_frames: int = 1
) -> list[AcousticFeatures]:
    """Contiguous non-overlapping chunks of at most max_chunk_s seconds.

    Chunk boundaries fall on frame boundaries; with ``align_frames`` they are
    additionally forced onto multiples of that count (token windows), except
    that the final chunk takes whatever remains. Concatenating the chunks
    reproduces the input exactly.
    """
    if max_chunk_s <= 0:
        raise DataError("max_chunk_s must be positive")
    if feats.n_frames < 1:
        raise DataError("empty stream")
    per_chunk = int(max_chunk_s / feats.frame_duration_s)
    per_chunk = max(1, (per_chunk // align_frames) * align_frames if align_frames > 1 else per_chunk)
    chunks = []
    for start in range(0, feats.n_frames, per_chunk):
        block = feats.values[start : start + per_chunk]
        chunks.append(AcousticFeatures(block.copy(), feats.frame_duration_s))
    return chunks


def affinity_from_embeddings(embeddings: np.ndarray) -> np.ndarray:
    """Pairwise cosine clipped to [0, 1] with exact unit diagonal.

    Clipping negatives to zero keeps the graph weights nonnegative without
    inflating weak cross-speaker edges, which the eigengap needs to stay
    informative.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 1:
        raise ShapeError("embeddings must be a nonempty 2-D array")
    norms = np.linalg.norm(emb, axis=1)
    if norms.min() == 0.0:
        raise DegenerateInputError("zero-norm embedding row")
    unit = emb / norms[:, None]
    aff = np.clip(unit @ unit.T, 0.0, 1.0)
    aff = (aff + aff.T) / 2.0
    np.fill_diagonal(aff, 1.0)
    return aff


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    k: int


def _kmeans(points: np.ndarray, k: int, seed: int, restarts: int = 10) -> np.ndarray:
    """Seeded k-means++ with restarts; ties go to the lowest centroid index."""
    m = points.shape[0]
    best_labels = None
    best_inertia = np.inf
    for r in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence([seed, r]))
        centers = np.empty((k, points.shape[1]))
        centers[0] = points[rng.integers(m)]
        d2 = np.sum((points - centers[0]) ** 2, axis=1)
        for c in range(1, k):
            total = d2.sum()
            if total <= 0:
                centers[c] = points[rng.integers(m)]
            else:
                centers[c] = points[rng.choice(m, p=d2 / total)]
            d2 = np.minimum(d2, np.sum((points - centers[c]) ** 2, axis=1))
        labels = np.zeros(m, dtype=np.int64)
        for it in range(100):
            dist = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
            new_labels = np.argmin(dist, axis=1)
            if it > 0 and np.array_equal(new_labels, labels):
                break
            labels = new_labels
            for c in range(k):
                pts = points[labels == c]
                if len(pts):
                    centers[c] = pts.mean(axis=0)
        inertia = float(np.sum((points - centers[labels]) ** 2))
        if inertia < best_inertia - 1e-12:
            best_inertia = inertia
            best_labels = labels.copy()
    return best_labels


def spectral_cluster(
    affinity: np.ndarray,
    k_hint: int | None = None,
    max_speakers: int = DEFAULT_MAX_SPEAKERS,
    seed: int = 0,
) -> ClusterAssignment:
    """Cluster rows of a symmetric nonnegative affinity with unit diagonal.

    Uses the symmetric normalized Laplacian; when ``k_hint`` is absent, the
    cluster count is the largest gap in the sorted eigenvalue sequence over
    [1, max_speakers] (ties to the smallest count). The rows of the first-K
    eigenvector matrix are row-normalized and k-means clustered.
    """
    a = np.asarray(affinity, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError("affinity must be square")
    m = a.shape[0]
    if np.max(np.abs(a - a.T)) > SYMMETRY_TOL:
        raise ShapeError("affinity is not symmetric")
    if np.max(np.abs(np.diag(a) - 1.0)) > 1e-9:
        raise ShapeError("affinity diagonal must be 1")
    if a.min() < -SYMMETRY_TOL:
        raise ShapeError("affinity entries must be nonnegative")
    if k_hint is not None and not 1 <= k_hint <= m:
        raise DataError(f"k_hint {k_hint} outside [1, {m}]")
    if m == 1:
        return ClusterAssignment(labels=np.zeros(1, dtype=np.int64), k=1)

    a = (a + a.T) / 2.0
    deg = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    lap = np.eye(m) - inv_sqrt[:, None] * a * inv_sqrt[None, :]
    eigvals, eigvecs = np.linalg.eigh(lap)

    if k_hint is not None:
        k = k_hint
    else:
        upper = min(max_speakers, m - 1)
        gaps = eigvals[1 : upper + 1] - eigvals[:upper]
        k = int(np.argmax(gaps)) + 1
    if k == 1:
        return ClusterAssignment(labels=np.zeros(m, dtype=np.int64), k=1)

    basis = eigvecs[:, :k].copy()
    norms = np.linalg.norm(basis, axis=1)
    safe = norms > 0
    basis[safe] /= norms[safe, None]
    basis[~safe, 0] = 1.0
    labels = _kmeans(basis, k, seed=seed)
    return ClusterAssignment(labels=labels, k=k)


@dataclass
class SpeakerStream:
    id: int
    tokens: list[int]
    positions: list[int]


@dataclass
class AttributedTranscript:
    """Per-speaker token streams; together they partition the kept tokens,
    each stream preserving global temporal order."""

    speakers: list[SpeakerStream]
    k: int
    config_hash: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "speakers": [
                    {"id": s.id, "tokens": s.tokens, "positions": s.positions}
                    for s in self.speakers
                ],
                "k": self.k,
                "config_hash": self.config_hash,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "AttributedTranscript":
        obj = json.loads(text)
        return cls(
            speakers=[
                SpeakerStream(int(s["id"]), [int(t) for t in s["tokens"]], [int(p) for p in s["positions"]])
                for s in obj["speakers"]
            ],
            k=int(obj["k"]),
            config_hash=obj.get("config_hash", ""),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "AttributedTranscript":
        return cls.from_json(Path(path).read_text())

    def stream_map(self) -> dict[str, list[int]]:
        """Speaker-key -> token sequence view for metric evaluation."""
        return {str(s.id): list(s.tokens) for s in self.speakers}


def _relabel_by_first_appearance(labels: np.ndarray) -> np.ndarray:
    mapping: dict[int, int] = {}
    out = np.empty_like(labels)
    for i, lab in enumerate(labels):
        if lab not in mapping:
            mapping[int(lab)] = len(mapping)
        out[i] = mapping[int(lab)]
    return out


def attribute_recording(
    module: SpeakerModule,
    world: SyntheticWorld,
    feats: AcousticFeatures,
    gold_tokens=None,
    k_hint: int | None = None,
    max_chunk_s: float = 30.0,
    max_speakers: int = DEFAULT_MAX_SPEAKERS,
    seed: int = 0,
    config_hash: str = "",
) -> AttributedTranscript:
    """Chunk, run the recognizer and speaker module per chunk, pool token
    embeddings, cluster once, and emit per-speaker streams."""
    chunks = chunk_stream(feats, max_chunk_s, align_frames=world.frames_per_token)
    tokens_all: list[int] = []
    emb_blocks: list[np.ndarray] = []
    gold = None if gold_tokens is None else [int(t) for t in gold_tokens]
    consumed = 0
    for chunk in chunks:
        chunk_tokens = None
        if gold is not None:
            n_windows = chunk.n_frames // world.frames_per_token
            chunk_tokens = gold[consumed : consumed + n_windows]
            consumed += n_windows
        asr_out, emb = attribute_tokens(module, world, chunk, tokens=chunk_tokens)
        tokens_all.extend(int(t) for t in asr_out.tokens)
        emb_blocks.append(emb.values.data)
    if gold is not None and consumed != len(gold):
        raise DataError(
            f"gold transcript has {len(gold)} tokens but the stream holds {consumed} token windows"
        )
    embeddings = np.vstack(emb_blocks)
    assignment = spectral_cluster(
        affinity_from_embeddings(embeddings), k_hint=k_hint, max_speakers=max_speakers, seed=seed
    )
    labels = _relabel_by_first_appearance(assignment.labels)
    n_used = int(labels.max()) + 1
    streams = []
    for c in range(n_used):
        pos = np.flatnonzero(labels == c)
        streams.append(
            SpeakerStream(
                id=c,
                tokens=[tokens_all[p] for p in pos],
                positions=[int(p) for p in pos],
            )
        )
    return AttributedTranscript(speakers=streams, k=n_used, config_hash=config_hash)
