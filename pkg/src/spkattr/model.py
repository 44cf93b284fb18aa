"""Trainable speaker module: acoustic encoder plus token-level decoder.

The decoder turns the recognizer's token sequence into one speaker embedding
per token, in a single parallel pass. Its cross-attention draws values from
the speaker encoder's features in every layer; keys come from the frozen
recognizer's features in the first ``asr_keyed_layers`` layers and from the
speaker encoder's features afterwards. Word and position tables are shared
storage with the recognizer-side token embedding adapter.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError, ShapeError
from .loss import EmbeddingSequence
from .world import AcousticFeatures

NORM_FLOOR = 1e-8
ATTN_MASK_VALUE = -1e9

CHECKPOINT_MAGIC = b"MSAS"
CHECKPOINT_VERSION = 1


@dataclass
class SpeakerModuleConfig:
    decoder_layers: int = 2
    asr_keyed_layers: int = 1
    heads: int = 2
    model_dim: int = 32
    output_dim: int = 16
    vocab_size: int = 64
    max_positions: int = 128
    encoder_layers: int = 2
    input_dim: int = 32

    def __post_init__(self):
        if not 0 <= self.asr_keyed_layers <= self.decoder_layers:
            raise ConfigError("asr_keyed_layers must lie in [0, decoder_layers]")
        if self.model_dim % self.heads != 0:
            raise ConfigError("model_dim must be divisible by heads")
        if self.output_dim < 2:
            raise ConfigError("output_dim must be at least 2")

    @property
    def ffn_dim(self) -> int:
        return 4 * self.model_dim


@dataclass
class SharedTokenEmbedding:
    """Word/position tables; one storage shared by decoder and ASR adapter."""

    word: Tensor
    pos: Tensor


class AsrEmbeddingAdapter:
    """Recognizer-side view onto the shared token embedding storage."""

    def __init__(self, shared: SharedTokenEmbedding):
        self.shared = shared

    @property
    def word_table(self) -> Tensor:
        return self.shared.word

    @property
    def pos_table(self) -> Tensor:
        return self.shared.pos

    def embed_tokens(self, token_ids) -> np.ndarray:
        ids = np.asarray(token_ids, dtype=np.int64)
        return self.shared.word.data[ids] + self.shared.pos.data[: len(ids)]


def _uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


_SINUSOID_CACHE: dict[tuple[int, int], np.ndarray] = {}


def sinusoid_positions(n: int, dim: int) -> np.ndarray:
    cached = _SINUSOID_CACHE.get((n, dim))
    if cached is not None:
        return cached
    pos = np.arange(n)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    out = np.empty((n, dim))
    out[:, 0::2] = np.sin(angle[:, 0::2])
    out[:, 1::2] = np.cos(angle[:, 1::2])
    _SINUSOID_CACHE[(n, dim)] = out
    return out


class SpeakerModule:
    """Parameter container plus the encode/decode forward passes."""

    def __init__(self, config: SpeakerModuleConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params
        self.shared_embedding = SharedTokenEmbedding(params["embed.word"], params["embed.pos"])
        self.asr_embedding_adapter = AsrEmbeddingAdapter(self.shared_embedding)

    @classmethod
    def init(cls, config: SpeakerModuleConfig, seed: int = 0) -> "SpeakerModule":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 20240101]))
        d, f = config.model_dim, config.ffn_dim
        p: dict[str, np.ndarray] = {}
        p["embed.word"] = rng.uniform(
            -np.sqrt(3.0 / d), np.sqrt(3.0 / d), size=(config.vocab_size, d)
        )
        # trainable, but sinusoid-initialized: matches the encoder's positional
        # family so cross-attention can address frame windows from step one
        p["embed.pos"] = sinusoid_positions(config.max_positions, d).copy()
        p["enc.in.w"] = _uniform(rng, config.input_dim, d, (config.input_dim, d))
        p["enc.in.b"] = np.zeros(d)

        def attn_block(prefix: str):
            for name in ("wq", "wk", "wv", "wo"):
                p[f"{prefix}.{name}"] = _uniform(rng, d, d, (d, d))
            for name in ("bq", "bk", "bv", "bo"):
                p[f"{prefix}.{name}"] = np.zeros(d)

        def ln_block(prefix: str):
            p[f"{prefix}.g"] = np.ones(d)
            p[f"{prefix}.b"] = np.zeros(d)

        def ffn_block(prefix: str):
            p[f"{prefix}.w1"] = _uniform(rng, d, f, (d, f))
            p[f"{prefix}.b1"] = np.zeros(f)
            p[f"{prefix}.w2"] = _uniform(rng, f, d, (f, d))
            p[f"{prefix}.b2"] = np.zeros(d)

        for i in range(config.encoder_layers):
            ln_block(f"enc.{i}.ln1")
            attn_block(f"enc.{i}.attn")
            ln_block(f"enc.{i}.ln2")
            ffn_block(f"enc.{i}.ffn")
        ln_block("enc.ln")
        for i in range(config.decoder_layers):
            ln_block(f"dec.{i}.ln1")
            attn_block(f"dec.{i}.self")
            ln_block(f"dec.{i}.ln2")
            attn_block(f"dec.{i}.cross")
            ln_block(f"dec.{i}.ln3")
            ffn_block(f"dec.{i}.ffn")
        ln_block("dec.ln")
        p["head.w"] = _uniform(rng, d, config.output_dim, (d, config.output_dim))
        p["head.b"] = np.zeros(config.output_dim)
        params = {name: ad.tensor(arr, requires_grad=True) for name, arr in p.items()}
        return cls(config, params)

    def _ln(self, x: Tensor, prefix: str) -> Tensor:
        return ad.layer_norm(x, self.params[f"{prefix}.g"], self.params[f"{prefix}.b"])

    def _mha(
        self,
        prefix: str,
        q_in: Tensor,
        k_src: Tensor,
        v_src: Tensor,
        mask: np.ndarray | None = None,
    ) -> Tensor:
        p = self.params
        q = ad.linear(q_in, p[f"{prefix}.wq"], p[f"{prefix}.bq"])
        k = ad.linear(k_src, p[f"{prefix}.wk"], p[f"{prefix}.bk"])
        v = ad.linear(v_src, p[f"{prefix}.wv"], p[f"{prefix}.bv"])
        ctx = ad.attention(q, k, v, self.config.heads, mask=mask)
        return ad.linear(ctx, p[f"{prefix}.wo"], p[f"{prefix}.bo"])

    def _ffn(self, x: Tensor, prefix: str) -> Tensor:
        p = self.params
        h = ad.tanh(ad.linear(x, p[f"{prefix}.w1"], p[f"{prefix}.b1"]))
        return ad.linear(h, p[f"{prefix}.w2"], p[f"{prefix}.b2"])

    def encode(self, feats: AcousticFeatures | np.ndarray) -> Tensor:
        """Acoustic frames -> speaker encoder features (L x model_dim)."""
        values = feats.values if isinstance(feats, AcousticFeatures) else np.asarray(feats)
        if values.ndim != 2 or values.shape[0] < 1:
            raise ShapeError("encoder input must be a nonempty 2-D frame matrix")
        if values.shape[1] != self.config.input_dim:
            raise ShapeError(
                f"encoder expects input dim {self.config.input_dim}, got {values.shape[1]}"
            )
        x = ad.linear(ad.constant(values), self.params["enc.in.w"], self.params["enc.in.b"])
        x = ad.add(x, ad.constant(sinusoid_positions(values.shape[0], self.config.model_dim)))
        for i in range(self.config.encoder_layers):
            a = self._ln(x, f"enc.{i}.ln1")
            x = ad.add(x, self._mha(f"enc.{i}.attn", a, a, a))
            b = self._ln(x, f"enc.{i}.ln2")
            x = ad.add(x, self._ffn(b, f"enc.{i}.ffn"))
        return self._ln(x, "enc.ln")

    def decode(
        self,
        tokens,
        h_asr: Tensor | np.ndarray,
        h_spk: Tensor,
        mask: np.ndarray | None = None,
    ) -> EmbeddingSequence:
        """One embedding row per token, produced in a single parallel pass.

        Self-attention is causal over token positions; tokens are the only
        sequential input, so the whole sequence decodes at once.
        """
        ids = np.asarray(tokens, dtype=np.int64)
        if ids.ndim != 1 or ids.size < 1:
            raise ShapeError("decode expects a nonempty 1-D token sequence")
        n = ids.size
        cfg = self.config
        if n > cfg.max_positions:
            raise DataError(f"sequence length {n} exceeds max positions {cfg.max_positions}")
        if ids.min() < 0 or ids.max() >= cfg.vocab_size:
            raise DataError("token id outside vocabulary")
        if not isinstance(h_asr, Tensor):
            h_asr = ad.constant(np.asarray(h_asr, dtype=np.float64))
        if h_asr.data.shape[1] != cfg.model_dim or h_spk.data.shape[1] != cfg.model_dim:
            raise ShapeError("encoder feature width must equal model_dim")
        if h_asr.data.shape[0] != h_spk.data.shape[0]:
            raise ShapeError("recognizer and speaker encoder features must share frame count")

        x = ad.add(
            ad.embedding(self.params["embed.word"], ids),
            ad.embedding(self.params["embed.pos"], np.arange(n)),
        )
        causal = np.triu(np.full((n, n), ATTN_MASK_VALUE), k=1)
        for i in range(cfg.decoder_layers):
            a = self._ln(x, f"dec.{i}.ln1")
            x = ad.add(x, self._mha(f"dec.{i}.self", a, a, a, mask=causal))
            b = self._ln(x, f"dec.{i}.ln2")
            k_src = h_asr if i < cfg.asr_keyed_layers else h_spk
            x = ad.add(x, self._mha(f"dec.{i}.cross", b, k_src, h_spk))
            c = self._ln(x, f"dec.{i}.ln3")
            x = ad.add(x, self._ffn(c, f"dec.{i}.ffn"))
        x = self._ln(x, "dec.ln")
        raw = ad.linear(x, self.params["head.w"], self.params["head.b"])
        out = ad.floor_norm(raw, NORM_FLOOR)
        if mask is None:
            mask = np.ones(n, dtype=bool)
        return EmbeddingSequence(out, mask)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def attribute_tokens(module: SpeakerModule, world, feats: AcousticFeatures, tokens=None):
    """Full forward: frozen recognizer (or gold tokens), then speaker paths.

    Returns the recognizer output and the aligned embedding sequence.
    """
    if tokens is None:
        asr_out = world.transcribe(feats)
    else:
        asr_out = world.gold_transcript_output(feats, tokens)
    h_spk = module.encode(feats)
    emb = module.decode(asr_out.tokens, asr_out.encoder_features, h_spk)
    return asr_out, emb


def save_checkpoint(
    path: str | Path,
    module: SpeakerModule,
    world_config: dict | None = None,
    optimizer_arrays: dict[str, np.ndarray] | None = None,
    optimizer_meta: dict | None = None,
    step: int = 0,
    metrics: dict | None = None,
) -> None:
    """Binary container: magic, version, JSON header, named float64 records."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {f"model.{k}": v.data for k, v in module.params.items()}
    if optimizer_arrays:
        arrays.update(optimizer_arrays)
    records = [
        {"name": name, "dtype": "<f8", "shape": list(arr.shape)} for name, arr in arrays.items()
    ]
    header = {
        "config": asdict(module.config),
        "world_config": world_config,
        "step": step,
        "optimizer": optimizer_meta,
        "metrics": metrics,
        "records": records,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for name, arr in arrays.items():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


@dataclass
class Checkpoint:
    config: SpeakerModuleConfig
    world_config: dict | None
    step: int
    optimizer_meta: dict | None
    metrics: dict | None
    arrays: dict[str, np.ndarray]

    def build_module(self) -> SpeakerModule:
        params = {
            name[len("model.") :]: ad.tensor(arr.copy(), requires_grad=True)
            for name, arr in self.arrays.items()
            if name.startswith("model.")
        }
        return SpeakerModule(self.config, params)

    def optimizer_arrays(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.arrays.items() if k.startswith("adam.")}


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path} is not a checkpoint (bad magic)")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    offset = 12 + header_len
    arrays: dict[str, np.ndarray] = {}
    for rec in header["records"]:
        shape = tuple(rec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        arr = np.frombuffer(raw[offset : offset + nbytes], dtype="<f8").reshape(shape)
        arrays[rec["name"]] = arr.copy()
        offset += nbytes
    if offset != len(raw):
        raise DataError("checkpoint payload size disagrees with its header")
    return Checkpoint(
        config=SpeakerModuleConfig(**header["config"]),
        world_config=header.get("world_config"),
        step=int(header.get("step", 0)),
        optimizer_meta=header.get("optimizer"),
        metrics=header.get("metrics"),
        arrays=arrays,
    )
