"""Self-check battery behind the ``verify`` command.

Each suite re-derives expected values from first principles (scalar loops,
finite differences, exhaustive search) and compares the production path
against them. Failures are report content, not exceptions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from . import autodiff as ad
from . import loss as loss_mod
from .attribution import spectral_cluster
from .cpwer import cpwer, min_cost_assignment, word_edit_distance
from .model import SpeakerModule, SpeakerModuleConfig
from .world import SyntheticWorld


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str


def _loss_reference(e, t, w=(1.0, 1.0, 1.0)):
    """Scalar-loop recomputation of the three loss terms."""
    n = len(e)

    def cos(u, v):
        dot = nu = nv = 0.0
        for x, y in zip(u, v):
            dot += x * y
            nu += x * x
            nv += y * y
        return dot / (math.sqrt(nu) * math.sqrt(nv))

    l1 = sum(1.0 - cos(t[i], e[i]) for i in range(n))
    c_ee = [[cos(e[i], e[j]) for j in range(n)] for i in range(n)]
    c_tt = [[cos(t[i], t[j]) for j in range(n)] for i in range(n)]
    c_et = [[cos(e[i], t[j]) for j in range(n)] for i in range(n)]
    l2 = sum((c_ee[i][j] - c_tt[i][j]) ** 2 for i in range(n) for j in range(n)) / n**2
    l3 = sum((c_et[i][j] - c_tt[i][j]) ** 2 for i in range(n) for j in range(n)) / n**2
    return w[0] * l1 + w[1] * l2 + w[2] * l3


def gradient_suite(seeds: int = 5) -> SuiteResult:
    worst = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        e = ad.tensor(rng.normal(size=(4, 6)), requires_grad=True)
        t_arr = rng.normal(size=(4, 6))

        def f():
            e_seq = loss_mod.EmbeddingSequence(e, np.ones(4, dtype=bool))
            t_seq = loss_mod.EmbeddingSequence.from_array(t_arr)
            return loss_mod.total_loss(e_seq, t_seq).node

        report = ad.grad_check(f, {"e": e}, eps=1e-5, tol=1e-4)
        worst = max(worst, report.max_rel_err)
        if not report.passed:
            return SuiteResult("gradients", False, f"loss grad check failed: {report.summary()}")
    cfg = SpeakerModuleConfig(
        decoder_layers=2, asr_keyed_layers=1, heads=2, model_dim=16, output_dim=8,
        vocab_size=12, max_positions=16, encoder_layers=1, input_dim=4,
    )
    for seed in range(2):
        module = SpeakerModule.init(cfg, seed=seed)
        rng = np.random.default_rng(100 + seed)
        tokens = rng.integers(0, cfg.vocab_size, size=5)
        feats = rng.normal(size=(12, cfg.input_dim))
        h_asr = rng.normal(size=(12, cfg.model_dim))
        target = rng.normal(size=(5, cfg.output_dim))

        def f():
            emb = module.decode(tokens, h_asr, module.encode(feats))
            return loss_mod.total_loss(emb, loss_mod.EmbeddingSequence.from_array(target)).node

        report = ad.grad_check(
            f, module.params, eps=1e-5, tol=1e-4, max_coords_per_param=3,
            rng=np.random.default_rng(seed),
        )
        worst = max(worst, report.max_rel_err)
        if not report.passed:
            return SuiteResult("gradients", False, f"model grad check failed: {report.summary()}")
    return SuiteResult("gradients", True, f"max rel err {worst:.2e} (tol 1e-4)")


def loss_oracle_suite(cases: int = 50) -> SuiteResult:
    worst = 0.0
    for seed in range(cases):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 8))
        d = int(rng.integers(2, 12))
        e_arr = rng.normal(size=(n, d))
        t_arr = rng.normal(size=(n, d))
        got = loss_mod.total_loss(
            loss_mod.EmbeddingSequence.from_array(e_arr),
            loss_mod.EmbeddingSequence.from_array(t_arr),
        ).total
        want = _loss_reference(e_arr.tolist(), t_arr.tolist())
        worst = max(worst, abs(got - want))
        if abs(got - want) > 1e-12:
            return SuiteResult("loss_oracle", False, f"seed {seed}: |{got} - {want}| > 1e-12")
    fixtures = [
        (np.array([[1.0, 0.0]]), np.array([[-1.0, 0.0]]), 6.0),
        (np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([[1.0, 0.0], [1.0, 0.0]]), 2.0),
    ]
    for e_arr, t_arr, want in fixtures:
        got = loss_mod.total_loss(
            loss_mod.EmbeddingSequence.from_array(e_arr),
            loss_mod.EmbeddingSequence.from_array(t_arr),
        ).total
        if abs(got - want) > 1e-12:
            return SuiteResult("loss_oracle", False, f"fixture expected {want}, got {got}")
    return SuiteResult("loss_oracle", True, f"{cases} random cases + fixtures, max err {worst:.1e}")


def clustering_suite(mc_seeds: int = 15) -> SuiteResult:
    a = np.zeros((5, 5))
    a[:2, :2] = 1.0
    a[2:, 2:] = 1.0
    np.fill_diagonal(a, 1.0)
    out = spectral_cluster(a)
    if out.k != 2 or len(set(out.labels[:2])) != 1 or len(set(out.labels[2:])) != 1:
        return SuiteResult("clustering", False, "block-diagonal case not recovered")
    agreements = []
    for seed in range(mc_seeds):
        rng = np.random.default_rng(seed)
        m = 40
        truth = np.repeat([0, 1], m // 2)
        mu = np.where(truth[:, None] == truth[None, :], 0.9, 0.1)
        cos = rng.normal(mu, 0.05)
        aff = np.clip((cos + cos.T) / 2.0, 0.0, 1.0)
        np.fill_diagonal(aff, 1.0)
        got = spectral_cluster(aff, seed=seed)
        same_pred = got.labels[:, None] == got.labels[None, :]
        same_true = truth[:, None] == truth[None, :]
        iu = np.triu_indices(m, k=1)
        agreements.append(float(np.mean(same_pred[iu] == same_true[iu])))
    mean_agr = float(np.mean(agreements))
    if mean_agr < 0.95:
        return SuiteResult("clustering", False, f"mean pairwise agreement {mean_agr:.3f} < 0.95")
    return SuiteResult("clustering", True, f"blocks exact; noisy agreement {mean_agr:.3f}")


def cpwer_suite(cases: int = 50) -> SuiteResult:
    ref = {"s1": "a b c".split(), "s2": "d e".split()}
    hyp = {"x": "a b".split(), "y": "d e f".split()}
    if abs(cpwer(ref, hyp).cpwer - 0.4) > 1e-12:
        return SuiteResult("cpwer", False, "0.4 fixture failed")
    for seed in range(cases):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(1, 6))
        refs = [rng.integers(0, 4, size=rng.integers(1, 10)).tolist() for _ in range(k)]
        hyps = [rng.integers(0, 4, size=rng.integers(0, 10)).tolist() for _ in range(k)]
        cost = np.array(
            [[word_edit_distance(r, h).total for h in hyps] for r in refs], dtype=float
        )
        best = min(sum(cost[i, p[i]] for i in range(k)) for p in permutations(range(k)))
        perm = min_cost_assignment(cost)
        got = sum(cost[i, perm[i]] for i in range(k))
        if got != best:
            return SuiteResult("cpwer", False, f"seed {seed}: assignment {got} != exhaustive {best}")
    return SuiteResult("cpwer", True, f"fixture + {cases} assignment-vs-exhaustive cases")


def world_suite() -> SuiteResult:
    w = SyntheticWorld(seed=5, noise_sigma=0.0)
    h0 = w.param_hash()
    rng = np.random.default_rng(0)
    for trial in range(5):
        spk = int(rng.integers(0, w.num_speakers))
        tokens = rng.integers(0, w.vocab_size, size=10).tolist()
        feats, _ = w.synth_turn(spk, tokens, salt=trial)
        if w.transcribe(feats).tokens.tolist() != tokens:
            return SuiteResult("world", False, "noiseless decode not exact")
    if w.param_hash() != h0:
        return SuiteResult("world", False, "world parameters moved")
    if SyntheticWorld(seed=5, noise_sigma=0.0).param_hash() != h0:
        return SuiteResult("world", False, "world not deterministic per seed")
    return SuiteResult("world", True, "noiseless decode exact; frozen and deterministic")


def run_all(fast: bool = False) -> list[SuiteResult]:
    if fast:
        return [
            gradient_suite(seeds=2),
            loss_oracle_suite(cases=15),
            clustering_suite(mc_seeds=5),
            cpwer_suite(cases=15),
            world_suite(),
        ]
    return [
        gradient_suite(),
        loss_oracle_suite(),
        clustering_suite(),
        cpwer_suite(),
        world_suite(),
    ]
