"""Experiment configuration: one JSON document, explicit seeds, hashable.

Desk-scale defaults train a 2+2-layer model on 2000 mixed samples for 2000
steps in minutes. Full-scale reference recipe for this architecture family
(kept for provenance): 12 encoder + 12 decoder layers, batch 80, 250k steps,
learning rate 1e-4.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .loss import LossWeights
from .mixer import EmbeddingOracle, MixerConfig
from .model import SpeakerModuleConfig
from .world import SyntheticWorld


@dataclass
class WorldSettings:
    seed: int = 1234
    vocab_size: int = 64
    num_speakers: int = 16
    feature_dim: int = 32
    encoder_dim: int = 32
    noise_sigma: float = 0.02
    frames_per_token: int = 4
    frame_duration_s: float = 0.08

    def build(self) -> SyntheticWorld:
        return SyntheticWorld(**asdict(self))


@dataclass
class OptimizerSettings:
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 16
    steps: int = 2000
    warmup_steps: int = 100

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.steps < 0 or self.warmup_steps < 0:
            raise ConfigError("optimizer settings out of range")


@dataclass
class DataSettings:
    train_samples: int = 2000
    eval_recordings: int = 200
    eval_min_speakers: int = 2
    eval_max_speakers: int = 5
    eval_min_turns_per_speaker: int = 2
    eval_max_turns_per_speaker: int = 4

    def __post_init__(self):
        if self.eval_min_speakers < 1 or self.eval_max_speakers < self.eval_min_speakers:
            raise ConfigError("bad eval speaker range")


@dataclass
class SeedSettings:
    corpus: int = 101
    grouping: int = 102
    sampling: int = 103
    model_init: int = 104
    train: int = 105
    eval: int = 106

    def reseed(self, master: int) -> "SeedSettings":
        return SeedSettings(*(master * 1000 + i for i in range(6)))


def _from_dict(cls, obj: dict, where: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class ExperimentConfig:
    world: WorldSettings = field(default_factory=WorldSettings)
    mixer: MixerConfig = field(default_factory=MixerConfig)
    model: SpeakerModuleConfig = field(default_factory=SpeakerModuleConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    data: DataSettings = field(default_factory=DataSettings)
    seeds: SeedSettings = field(default_factory=SeedSettings)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.model.vocab_size != self.world.vocab_size:
            raise ConfigError("model vocab_size must match world vocab_size")
        if self.model.input_dim != self.world.feature_dim:
            raise ConfigError("model input_dim must match world feature_dim")
        if self.model.model_dim != self.world.encoder_dim:
            raise ConfigError("model model_dim must match world encoder_dim")
        max_tokens_per_chunk = int(30.0 / (self.world.frames_per_token * self.world.frame_duration_s))
        if self.model.max_positions < max_tokens_per_chunk:
            raise ConfigError(
                f"max_positions {self.model.max_positions} cannot hold a 30 s chunk "
                f"({max_tokens_per_chunk} tokens)"
            )

    def to_dict(self) -> dict:
        return {
            "world": asdict(self.world),
            "mixer": asdict(self.mixer),
            "model": asdict(self.model),
            "loss_weights": asdict(self.loss_weights),
            "optimizer": asdict(self.optimizer),
            "data": asdict(self.data),
            "seeds": asdict(self.seeds),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config root must be an object")
        known = {
            "world": (WorldSettings, "world"),
            "mixer": (MixerConfig, "mixer"),
            "model": (SpeakerModuleConfig, "model"),
            "loss_weights": (LossWeights, "loss_weights"),
            "optimizer": (OptimizerSettings, "optimizer"),
            "data": (DataSettings, "data"),
            "seeds": (SeedSettings, "seeds"),
        }
        unknown = set(obj) - set(known)
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        kwargs = {}
        for key, (section_cls, where) in known.items():
            if key in obj:
                kwargs[key] = _from_dict(section_cls, obj[key], where)
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            obj = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}"
            ) from exc
        return cls.from_dict(obj)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()[:16]

    def build_world(self) -> SyntheticWorld:
        return self.world.build()

    def build_oracle(self, world: SyntheticWorld) -> EmbeddingOracle:
        return EmbeddingOracle(world, output_dim=self.model.output_dim)

    def with_master_seed(self, master: int) -> "ExperimentConfig":
        out = ExperimentConfig.from_dict(self.to_dict())
        out.seeds = out.seeds.reseed(master)
        out.world.seed = master * 1000 + 999
        return out
