"""Deterministic synthetic acoustic world plus a frozen ASR stand-in.

A world owns three frozen, seed-derived dictionaries:

  - one unit signature vector per speaker (orthonormal set),
  - one unit content vector per vocabulary token,
  - a fixed random projection used to produce encoder features.

A frame is ``signature + content + noise``. Transcription decodes each
fixed-width token window by matching its mean frame against all
signature+content composites, which recovers the generating tokens exactly
on noiseless streams. Nothing in here carries gradients; a trained system
treats this module the way it would treat a pretrained recognizer.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError

_SALT_TURN = 101
_SALT_SIGNATURES = 1
_SALT_CONTENT = 2
_SALT_ASR_PROJ = 3


@dataclass
class AcousticFeatures:
    """L x f_a frame matrix with its time base."""

    values: np.ndarray
    frame_duration_s: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ShapeError("features must be a nonempty 2-D frame matrix")
        if not np.all(np.isfinite(self.values)):
            raise DataError("non-finite feature values")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def duration_s(self) -> float:
        return self.n_frames * self.frame_duration_s


@dataclass
class Turn:
    """One single-speaker utterance.

    ``speaker_ref`` is ground truth kept for evaluation only; the training
    path never reads it. ``embedding`` is the weak label filled in by the
    surrogate embedding oracle.
    """

    id: str
    token_ids: list[int]
    duration_s: float
    speaker_ref: str
    embedding: np.ndarray | None = None


@dataclass
class AsrOutput:
    tokens: np.ndarray
    encoder_features: np.ndarray
    alignment_spans: list[tuple[int, int]]


def _rng(*entropy) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(entropy)))


@dataclass
class SyntheticWorld:
    """Frozen acoustic/ASR provider; immutable after construction."""

    seed: int = 1234
    vocab_size: int = 64
    num_speakers: int = 16
    feature_dim: int = 32
    encoder_dim: int = 32
    noise_sigma: float = 0.02
    frames_per_token: int = 4
    frame_duration_s: float = 0.08
    signatures: np.ndarray = field(init=False, repr=False)
    contents: np.ndarray = field(init=False, repr=False)
    _asr_proj: np.ndarray = field(init=False, repr=False)
    _composites: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.num_speakers > self.feature_dim:
            raise DataError("cannot draw more orthonormal signatures than feature dimensions")
        sig_rng = _rng(self.seed, _SALT_SIGNATURES)
        q, _ = np.linalg.qr(sig_rng.normal(size=(self.feature_dim, self.num_speakers)))
        self.signatures = q.T.copy()
        con_rng = _rng(self.seed, _SALT_CONTENT)
        contents = con_rng.normal(size=(self.vocab_size, self.feature_dim))
        self.contents = contents / np.linalg.norm(contents, axis=1, keepdims=True)
        proj_rng = _rng(self.seed, _SALT_ASR_PROJ)
        self._asr_proj = proj_rng.normal(size=(self.feature_dim, self.encoder_dim)) / np.sqrt(
            self.feature_dim
        )
        # composite[s, t] = signature_s + content_t, used by window decoding
        self._composites = self.signatures[:, None, :] + self.contents[None, :, :]

    @property
    def token_duration_s(self) -> float:
        return self.frames_per_token * self.frame_duration_s

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.signatures, self.contents, self._asr_proj):
            h.update(arr.tobytes())
        return h.hexdigest()

    def synth_turn(
        self, speaker_id: int, token_ids, salt: int = 0
    ) -> tuple[AcousticFeatures, Turn]:
        """Render one turn: per token, frames_per_token frames of
        signature + content + Gaussian noise. Bit-deterministic in
        (world seed, speaker, tokens, salt)."""
        token_ids = [int(t) for t in token_ids]
        if not token_ids:
            raise DataError("a turn needs at least one token")
        if not 0 <= speaker_id < self.num_speakers:
            raise DataError(f"unknown speaker id {speaker_id}")
        if min(token_ids) < 0 or max(token_ids) >= self.vocab_size:
            raise DataError("token id outside vocabulary")
        clean = np.repeat(
            self.signatures[speaker_id][None, :] + self.contents[token_ids], self.frames_per_token, axis=0
        )
        if self.noise_sigma > 0:
            noise_rng = _rng(self.seed, _SALT_TURN, speaker_id, salt, *token_ids)
            clean = clean + self.noise_sigma * noise_rng.standard_normal(clean.shape)
        feats = AcousticFeatures(clean, self.frame_duration_s)
        turn = Turn(
            id=f"s{speaker_id:03d}-{salt:06d}",
            token_ids=token_ids,
            duration_s=len(token_ids) * self.token_duration_s,
            speaker_ref=f"spk{speaker_id:03d}",
        )
        return feats, turn

    def window_means(self, feats: AcousticFeatures) -> np.ndarray:
        n_windows = feats.n_frames // self.frames_per_token
        if n_windows < 1:
            raise DataError(
                f"need at least {self.frames_per_token} frames to decode, got {feats.n_frames}"
            )
        used = feats.values[: n_windows * self.frames_per_token]
        return used.reshape(n_windows, self.frames_per_token, -1).mean(axis=1)

    def decode_windows(self, feats: AcousticFeatures) -> tuple[np.ndarray, np.ndarray]:
        """Per token window, the (token, speaker) composite nearest to the
        window's mean frame; ties resolve to the lowest index."""
        means = self.window_means(feats)
        flat = self._composites.reshape(-1, self.feature_dim)
        d2 = (
            np.sum(means * means, axis=1)[:, None]
            - 2.0 * means @ flat.T
            + np.sum(flat * flat, axis=1)[None, :]
        )
        best = np.argmin(d2, axis=1)
        sig_ids, tokens = np.divmod(best, self.vocab_size)
        return tokens.astype(np.int64), sig_ids.astype(np.int64)

    def encoder_features(self, feats: AcousticFeatures) -> np.ndarray:
        """Frozen projection of frames to the encoder feature space."""
        if feats.values.shape[1] != self.feature_dim:
            raise ShapeError(
                f"feature dim {feats.values.shape[1]} != world feature dim {self.feature_dim}"
            )
        return feats.values @ self._asr_proj

    def _alignment_spans(self, n_tokens: int) -> list[tuple[int, int]]:
        return [(i * self.frames_per_token, (i + 1) * self.frames_per_token) for i in range(n_tokens)]

    def transcribe(self, feats: AcousticFeatures) -> AsrOutput:
        """Decode tokens and produce encoder features; no gradients."""
        tokens, _ = self.decode_windows(feats)
        return AsrOutput(
            tokens=tokens,
            encoder_features=self.encoder_features(feats),
            alignment_spans=self._alignment_spans(len(tokens)),
        )

    def gold_transcript_output(self, feats: AcousticFeatures, token_ids) -> AsrOutput:
        """Bypass decoding: attach externally supplied tokens to the stream."""
        tokens = np.asarray([int(t) for t in token_ids], dtype=np.int64)
        n_windows = feats.n_frames // self.frames_per_token
        if len(tokens) != n_windows:
            raise DataError(
                f"gold transcript has {len(tokens)} tokens but the stream holds {n_windows} token windows"
            )
        if len(tokens) and (tokens.min() < 0 or tokens.max() >= self.vocab_size):
            raise DataError("gold token id outside vocabulary")
        return AsrOutput(
            tokens=tokens,
            encoder_features=self.encoder_features(feats),
            alignment_spans=self._alignment_spans(len(tokens)),
        )


def save_features(
    path: str | Path,
    feats: AcousticFeatures,
    seed: int | None = None,
    extra: dict | None = None,
) -> None:
    """Write frames as little-endian float32 plus a JSON sidecar descriptor."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(feats.values.astype("<f4").tobytes())
    sidecar = {
        "shape": list(feats.values.shape),
        "frame_duration_s": feats.frame_duration_s,
        "seed": seed,
    }
    if extra:
        sidecar.update(extra)
    path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True))


def load_sidecar(path: str | Path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.with_suffix(".json").read_text())
    except FileNotFoundError as exc:
        raise DataError(f"missing sidecar descriptor for {path}") from exc


def load_features(path: str | Path) -> AcousticFeatures:
    path = Path(path)
    try:
        sidecar = json.loads(path.with_suffix(".json").read_text())
    except FileNotFoundError as exc:
        raise DataError(f"missing sidecar descriptor for {path}") from exc
    shape = tuple(sidecar["shape"])
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != shape[0] * shape[1]:
        raise DataError(f"feature payload size does not match sidecar shape for {path}")
    values = raw.reshape(shape).astype(np.float64)
    return AcousticFeatures(values, float(sidecar["frame_duration_s"]))
