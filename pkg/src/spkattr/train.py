"""Training loop: masked embedding loss over mixed samples, AdamW updates.

Deterministic by construction: batches are drawn from a per-step derived
generator (no ambient RNG state), so resuming from a checkpoint replays the
exact remaining schedule. The frozen recognizer's parameter hash is recorded
before and after and must not move.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import ExperimentConfig
from .errors import NumericError
from .loss import EmbeddingSequence, total_loss
from .model import SpeakerModule, load_checkpoint, save_checkpoint
from .optim import AdamW
from .pipeline import Corpus, evaluate_module, make_eval_recordings


@dataclass
class TrainLog:
    entries: list[dict] = field(default_factory=list)
    eval_points: list[dict] = field(default_factory=list)

    def log_step(self, step: int, alignment: float, discrimination: float, cross: float, total: float) -> None:
        if self.entries and step <= self.entries[-1]["step"]:
            raise NumericError("train log steps must increase strictly")
        for v in (alignment, discrimination, cross, total):
            if not np.isfinite(v):
                raise NumericError(f"non-finite loss at step {step}")
        self.entries.append(
            {
                "step": step,
                "alignment": alignment,
                "discrimination": discrimination,
                "cross": cross,
                "total": total,
            }
        )

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(json.dumps(e, sort_keys=True) + "\n")
            for e in self.eval_points:
                fh.write(json.dumps(e, sort_keys=True) + "\n")


@dataclass
class TrainResult:
    checkpoint_path: Path
    log: TrainLog
    asr_hash_before: str
    asr_hash_after: str
    final_loss: float
    steps_run: int


def _prepare_samples(corpus: Corpus):
    """Precompute the per-sample constants that do not change across steps."""
    world = corpus.world
    prepared = []
    for s in corpus.samples:
        h_asr = world.encoder_features(s.features)
        target = EmbeddingSequence.from_array(s.targets, s.mask.copy())
        prepared.append((s.tokens, s.features.values, h_asr, target, s.mask))
    return prepared


def train(
    config: ExperimentConfig,
    corpus: Corpus,
    out_dir: str | Path,
    resume_from: str | Path | None = None,
    eval_every: int = 0,
    dev_recordings: int = 8,
) -> TrainResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = corpus.world
    hash_before = world.param_hash()

    opt_cfg = config.optimizer
    if resume_from is not None:
        ck = load_checkpoint(resume_from)
        module = ck.build_module()
        optimizer = AdamW(
            module.params,
            lr=opt_cfg.lr,
            betas=(opt_cfg.beta1, opt_cfg.beta2),
            eps=opt_cfg.eps,
            weight_decay=opt_cfg.weight_decay,
        )
        optimizer.load_state_arrays(ck.optimizer_arrays(), ck.step)
        start_step = ck.step
    else:
        module = SpeakerModule.init(config.model, seed=config.seeds.model_init)
        optimizer = AdamW(
            module.params,
            lr=opt_cfg.lr,
            betas=(opt_cfg.beta1, opt_cfg.beta2),
            eps=opt_cfg.eps,
            weight_decay=opt_cfg.weight_decay,
        )
        start_step = 0

    prepared = _prepare_samples(corpus)
    n_samples = len(prepared)
    if n_samples == 0 and opt_cfg.steps > start_step:
        raise NumericError("cannot train on an empty corpus")

    dev_set = None
    if eval_every > 0:
        dev_set = make_eval_recordings(world, config, count=dev_recordings)

    log = TrainLog()
    weights = config.loss_weights
    for step in range(start_step, opt_cfg.steps):
        if opt_cfg.warmup_steps > 0:
            # linear warmup keyed to absolute step, so resume replays it
            optimizer.lr = opt_cfg.lr * min(1.0, (step + 1) / opt_cfg.warmup_steps)
        rng = np.random.default_rng(np.random.SeedSequence([config.seeds.train, step]))
        idx = rng.integers(0, n_samples, size=opt_cfg.batch_size)
        optimizer.zero_grad()
        align = disc = cross = 0.0
        nodes = []
        for i in idx:
            tokens, feat_values, h_asr, target, mask = prepared[i]
            h_spk = module.encode(feat_values)
            emb = module.decode(tokens, h_asr, h_spk, mask=mask)
            breakdown = total_loss(emb, target, weights)
            nodes.append(breakdown.node)
            align += breakdown.alignment
            disc += breakdown.discrimination
            cross += breakdown.cross
        batch = nodes[0]
        for node in nodes[1:]:
            batch = ad.add(batch, node)
        batch = ad.mul(batch, 1.0 / len(nodes))
        total = float(batch.data)
        if not np.isfinite(total):
            raise NumericError(f"training diverged at step {step}: loss is non-finite")
        ad.backward(batch)
        optimizer.step()
        b = len(nodes)
        log.log_step(step, align / b, disc / b, cross / b, total)
        if dev_set is not None and eval_every > 0 and (step + 1) % eval_every == 0:
            metrics = evaluate_module(module, world, dev_set, gold_tokens=True)
            log.eval_points.append({"eval_at_step": step + 1, **metrics})

    hash_after = world.param_hash()
    if hash_after != hash_before:
        raise NumericError("frozen recognizer parameters changed during training")

    ckpt_path = out / "model.ckpt"
    save_checkpoint(
        ckpt_path,
        module,
        world_config=config.to_dict()["world"],
        optimizer_arrays=optimizer.state_arrays(),
        optimizer_meta={
            "lr": opt_cfg.lr,
            "beta1": opt_cfg.beta1,
            "beta2": opt_cfg.beta2,
            "eps": opt_cfg.eps,
            "weight_decay": opt_cfg.weight_decay,
        },
        step=opt_cfg.steps,
        metrics={
            "config_hash": config.config_hash(),
            "asr_param_hash": hash_after,
            "final_loss": log.entries[-1]["total"] if log.entries else None,
        },
    )
    log.save(out / "trainlog.jsonl")
    return TrainResult(
        checkpoint_path=ckpt_path,
        log=log,
        asr_hash_before=hash_before,
        asr_hash_after=hash_after,
        final_loss=log.entries[-1]["total"] if log.entries else float("nan"),
        steps_run=opt_cfg.steps - start_step,
    )
