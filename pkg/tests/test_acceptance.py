"""Acceptance gate: every release criterion with its stated tolerance.

Each test prints one PASS/FAIL line. The end-to-end benchmark (criteria 6-8)
trains the full desk-scale model twice, which dominates the suite's runtime;
expect the whole module to take on the order of fifteen minutes on a
commodity CPU.
"""

import json
import time
from itertools import permutations

import numpy as np
import pytest

from spkattr import autodiff as ad
from spkattr.config import ExperimentConfig
from spkattr.cpwer import cpwer, min_cost_assignment, word_edit_distance
from spkattr.attribution import spectral_cluster
from spkattr.loss import EmbeddingSequence, total_loss
from spkattr.mixer import counterpart_rule_holds, validate_sample
from spkattr.model import SpeakerModule, SpeakerModuleConfig, load_checkpoint
from spkattr.pipeline import (
    build_corpus,
    corpus_fingerprint,
    evaluate_module,
    make_eval_recordings,
    save_corpus,
)
from spkattr.train import train

from oracles import total_oracle


def report(name, passed, detail=""):
    print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    assert passed, f"{name}: {detail}"


class TestCriterion1LossCorrectness:
    def test_loss_matches_oracle_and_fixtures(self):
        t0 = time.time()
        worst = 0.0
        rng_master = np.random.default_rng(20240808)
        for _ in range(100):
            n = int(rng_master.integers(1, 9))
            d = int(rng_master.integers(2, 17))
            e_arr = rng_master.normal(size=(n, d))
            t_arr = rng_master.normal(size=(n, d))
            got = total_loss(
                EmbeddingSequence.from_array(e_arr), EmbeddingSequence.from_array(t_arr)
            ).total
            want = total_oracle(e_arr.tolist(), t_arr.tolist())
            worst = max(worst, abs(got - want))
        assert worst <= 1e-12

        same = np.random.default_rng(1).normal(size=(4, 5))
        z = total_loss(
            EmbeddingSequence.from_array(same), EmbeddingSequence.from_array(same.copy())
        ).total
        anti = total_loss(
            EmbeddingSequence.from_array([[1.0, 0.0]]),
            EmbeddingSequence.from_array([[-1.0, 0.0]]),
        ).total
        hand = total_loss(
            EmbeddingSequence.from_array([[1.0, 0.0], [0.0, 1.0]]),
            EmbeddingSequence.from_array([[1.0, 0.0], [1.0, 0.0]]),
        ).total
        elapsed = time.time() - t0
        ok = (
            worst <= 1e-12
            and abs(z) <= 1e-12
            and abs(anti - 6.0) <= 1e-12
            and abs(hand - 2.0) <= 1e-12
            and elapsed < 5.0
        )
        report(
            "criterion 1 (loss correctness)",
            ok,
            f"100 random cases max err {worst:.1e}; fixtures 0/{anti:.1f}/{hand:.1f}; {elapsed:.1f}s",
        )


class TestCriterion2GradientValidity:
    def test_finite_difference_checks(self):
        t0 = time.time()
        worst = 0.0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            e = ad.tensor(rng.normal(size=(4, 6)), requires_grad=True)
            t_arr = rng.normal(size=(4, 6))

            def f():
                return total_loss(
                    EmbeddingSequence(e, np.ones(4, dtype=bool)),
                    EmbeddingSequence.from_array(t_arr),
                ).node

            rep = ad.grad_check(f, {"e": e}, eps=1e-5, tol=1e-4)
            worst = max(worst, rep.max_rel_err)
            assert rep.passed, rep.summary()

        cfg = SpeakerModuleConfig(
            decoder_layers=2, asr_keyed_layers=1, heads=2, model_dim=16, output_dim=8,
            vocab_size=16, max_positions=16, encoder_layers=2, input_dim=8,
        )
        for seed in range(10):
            module = SpeakerModule.init(cfg, seed=seed)
            rng = np.random.default_rng(100 + seed)
            tokens = rng.integers(0, cfg.vocab_size, size=6)
            feats = rng.normal(size=(24, cfg.input_dim))
            h_asr = rng.normal(size=(24, cfg.model_dim))
            target = rng.normal(size=(6, cfg.output_dim))

            def f():
                emb = module.decode(tokens, h_asr, module.encode(feats))
                return total_loss(emb, EmbeddingSequence.from_array(target)).node

            rep = ad.grad_check(
                f, module.params, eps=1e-5, tol=1e-4, max_coords_per_param=2,
                rng=np.random.default_rng(seed),
            )
            worst = max(worst, rep.max_rel_err)
            assert rep.passed, rep.summary()
        elapsed = time.time() - t0
        ok = elapsed < 60.0
        report(
            "criterion 2 (gradient validity)",
            ok,
            f"loss + full module, 10 seeds each, max rel err {worst:.2e} <= 1e-4; {elapsed:.1f}s",
        )


class TestCriterion3ArchitectureContract:
    def test_key_source_and_shared_embeddings(self):
        base = dict(
            heads=2, model_dim=16, output_dim=8, vocab_size=16,
            max_positions=16, encoder_layers=1, input_dim=8, decoder_layers=2,
        )
        rng = np.random.default_rng(0)
        tokens = rng.integers(0, 16, size=6)
        feats = rng.normal(size=(20, 8))

        module0 = SpeakerModule.init(SpeakerModuleConfig(asr_keyed_layers=0, **base), seed=1)
        h_spk0 = module0.encode(feats)
        ref0 = module0.decode(tokens, rng.normal(size=(20, 16)), h_spk0).values.data
        j0_invariant = all(
            np.array_equal(
                ref0, module0.decode(tokens, rng.normal(size=(20, 16)), h_spk0).values.data
            )
            for _ in range(10)
        )

        module1 = SpeakerModule.init(SpeakerModuleConfig(asr_keyed_layers=1, **base), seed=1)
        h_spk1 = module1.encode(feats)
        ref1 = module1.decode(tokens, rng.normal(size=(20, 16)), h_spk1).values.data
        probes = 40
        changed = sum(
            not np.allclose(
                ref1, module1.decode(tokens, rng.normal(size=(20, 16)), h_spk1).values.data,
                atol=1e-12,
            )
            for _ in range(probes)
        )

        adapter_shares = (
            module1.asr_embedding_adapter.word_table is module1.params["embed.word"]
            and module1.asr_embedding_adapter.pos_table is module1.params["embed.pos"]
        )
        before = module1.asr_embedding_adapter.embed_tokens([0]).copy()
        module1.shared_embedding.word.data[0, 0] += 0.5
        mutation_seen = not np.array_equal(before, module1.asr_embedding_adapter.embed_tokens([0]))

        ok = j0_invariant and changed >= int(0.95 * probes) and adapter_shares and mutation_seen
        report(
            "criterion 3 (architecture contract)",
            ok,
            f"J=0 exact-invariant: {j0_invariant}; J=1 changed {changed}/{probes} probes; "
            f"shared storage: {adapter_shares and mutation_seen}",
        )


class TestCriterion4CpwerOracle:
    def test_assignment_equals_exhaustive(self):
        t0 = time.time()
        rng = np.random.default_rng(4)
        for case in range(200):
            k = int(rng.integers(1, 6))
            refs = [rng.integers(0, 5, size=rng.integers(1, 13)).tolist() for _ in range(k)]
            hyps = [rng.integers(0, 5, size=rng.integers(0, 13)).tolist() for _ in range(k)]
            cost = np.array(
                [[word_edit_distance(r, h).total for h in hyps] for r in refs], dtype=float
            )
            best = min(sum(cost[i, p[i]] for i in range(k)) for p in permutations(range(k)))
            perm = min_cost_assignment(cost)
            got = sum(cost[i, perm[i]] for i in range(k))
            assert got == best, f"case {case}: {got} != {best}"
        fixture = cpwer(
            {"s1": "a b c".split(), "s2": "d e".split()},
            {"x": "a b".split(), "y": "d e f".split()},
        ).cpwer
        elapsed = time.time() - t0
        ok = fixture == pytest.approx(0.4, abs=1e-15) and elapsed < 10.0
        report(
            "criterion 4 (cpWER oracle equivalence)",
            ok,
            f"200 assignment-vs-exhaustive cases exact; fixture {fixture}; {elapsed:.1f}s",
        )


class TestCriterion5ClusteringRecovery:
    def test_eigengap_and_partition(self):
        t0 = time.time()
        a = np.zeros((5, 5))
        a[:2, :2] = 1.0
        a[2:, 2:] = 1.0
        np.fill_diagonal(a, 1.0)
        out = spectral_cluster(a)
        blocks_ok = (
            out.k == 2
            and len(set(out.labels[:2])) == 1
            and len(set(out.labels[2:])) == 1
            and out.labels[0] != out.labels[2]
        )

        sep = np.zeros((9, 9))
        sizes = [3, 2, 4]
        start = 0
        for s in sizes:
            sep[start : start + s, start : start + s] = 0.92
            start += s
        sep[sep == 0] = 0.08
        np.fill_diagonal(sep, 1.0)
        truth = np.repeat([0, 1, 2], sizes)
        hinted = spectral_cluster(sep, k_hint=3)
        hint_ok = hinted.k == 3 and all(
            len(set(hinted.labels[truth == c])) == 1 for c in range(3)
        ) and len(set(hinted.labels)) == 3

        agreements = []
        for seed in range(50):
            rng = np.random.default_rng(seed)
            m = 40
            planted = np.repeat([0, 1], m // 2)
            mu = np.where(planted[:, None] == planted[None, :], 0.9, 0.1)
            cos = rng.normal(mu, 0.05)
            aff = np.clip((cos + cos.T) / 2.0, 0.0, 1.0)
            np.fill_diagonal(aff, 1.0)
            got = spectral_cluster(aff, seed=seed)
            same_pred = got.labels[:, None] == got.labels[None, :]
            same_true = planted[:, None] == planted[None, :]
            iu = np.triu_indices(m, k=1)
            agreements.append(float(np.mean(same_pred[iu] == same_true[iu])))
        mean_agr = float(np.mean(agreements))
        elapsed = time.time() - t0
        ok = blocks_ok and hint_ok and mean_agr >= 0.95 and elapsed < 30.0
        report(
            "criterion 5 (clustering recovery)",
            ok,
            f"blocks exact: {blocks_ok}; hinted exact: {hint_ok}; "
            f"noisy agreement {mean_agr:.3f} >= 0.95; {elapsed:.1f}s",
        )


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    """One full desk-scale pipeline run (criteria 6-8 share it)."""

    def run(tag: str):
        out = tmp_path_factory.mktemp(f"desk_{tag}")
        config = ExperimentConfig()
        corpus = build_corpus(config)
        save_corpus(corpus, out / "corpus", config)
        fingerprint = corpus_fingerprint(out / "corpus")
        result = train(config, corpus, out / "run")
        module = load_checkpoint(result.checkpoint_path).build_module()
        recordings = make_eval_recordings(corpus.world, config)
        metrics = evaluate_module(
            module, corpus.world, recordings, gold_tokens=True,
            config_hash=config.config_hash(),
        )
        metrics_json = json.dumps(metrics, sort_keys=True)
        return {
            "config": config,
            "corpus": corpus,
            "fingerprint": fingerprint,
            "result": result,
            "metrics": metrics,
            "metrics_json": metrics_json,
        }

    t0 = time.time()
    first = run("a")
    first_elapsed = time.time() - t0
    second = run("b")
    return {"first": first, "second": second, "first_elapsed": first_elapsed}


class TestCriterion6DataPipeline:
    def test_thousand_samples_hold_invariants(self, desk_run):
        config = desk_run["first"]["config"]
        corpus = desk_run["first"]["corpus"]
        turns_by_id = corpus.turns_by_id
        checked = 0
        for sample in corpus.samples[:1000]:
            validate_sample(sample, turns_by_id, config.mixer)
            assert counterpart_rule_holds(sample, turns_by_id, corpus.groups)
            assert sample.group_count <= 5
            assert sample.duration_s <= 30.0 + 1e-9
            checked += 1
        reproducible = desk_run["first"]["fingerprint"] == desk_run["second"]["fingerprint"]
        ok = checked == 1000 and reproducible
        report(
            "criterion 6 (data-pipeline invariants)",
            ok,
            f"{checked} samples hold caps/counterpart/T-alignment; byte-reproducible: {reproducible}",
        )


class TestCriterion7EndToEnd:
    def test_synthetic_benchmark(self, desk_run):
        first = desk_run["first"]
        metrics = first["metrics"]
        result = first["result"]
        elapsed = desk_run["first_elapsed"]
        frozen = result.asr_hash_before == result.asr_hash_after
        acc = metrics["attribution_accuracy_pooled"]
        cp = metrics["cpwer_pooled"]
        entries = result.log.entries
        early = float(np.mean([e["total"] for e in entries[:10]]))
        late = float(np.mean([e["total"] for e in entries[-10:]]))
        loss_halved = late <= 0.5 * early
        ok = acc >= 0.90 and cp <= 0.05 and frozen and loss_halved and elapsed <= 900.0
        report(
            "criterion 7 (end-to-end benchmark)",
            ok,
            f"attribution accuracy {acc:.4f} >= 0.90; gold cpWER {cp:.4f} <= 0.05; "
            f"loss {early:.2f}->{late:.2f} (>=50% drop: {loss_halved}); "
            f"frozen recognizer: {frozen}; {elapsed:.0f}s <= 900s",
        )

    def test_gold_tokens_beat_decoded_on_noisy_streams(self, desk_run):
        """Paired comparison: with decode errors present, supplying the true
        transcript must not score worse than decoding."""
        first = desk_run["first"]
        config = first["config"]
        module = load_checkpoint(first["result"].checkpoint_path).build_module()
        noisy_cfg = ExperimentConfig.from_dict(config.to_dict())
        noisy_cfg.world.noise_sigma = 0.35
        noisy_cfg.data.eval_recordings = 40
        noisy_world = noisy_cfg.build_world()
        recordings = make_eval_recordings(noisy_world, noisy_cfg)
        gold = evaluate_module(module, noisy_world, recordings, gold_tokens=True)
        decoded = evaluate_module(module, noisy_world, recordings, gold_tokens=False)
        ok = gold["cpwer_pooled"] <= decoded["cpwer_pooled"]
        report(
            "criterion 7 addendum (gold vs decoded, noisy streams)",
            ok,
            f"gold cpWER {gold['cpwer_pooled']:.4f} <= decoded cpWER {decoded['cpwer_pooled']:.4f}",
        )


class TestCriterion8Determinism:
    def test_two_runs_identical(self, desk_run):
        same_corpus = desk_run["first"]["fingerprint"] == desk_run["second"]["fingerprint"]
        same_metrics = desk_run["first"]["metrics_json"] == desk_run["second"]["metrics_json"]
        ok = same_corpus and same_metrics
        report(
            "criterion 8 (determinism)",
            ok,
            f"corpus fingerprints equal: {same_corpus}; metric JSON identical: {same_metrics}",
        )
