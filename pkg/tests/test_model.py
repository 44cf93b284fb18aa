import numpy as np
import pytest

from spkattr import autodiff as ad
from spkattr.errors import ConfigError, DataError
from spkattr.loss import EmbeddingSequence, total_loss
from spkattr.model import (
    SpeakerModule,
    SpeakerModuleConfig,
    attribute_tokens,
    load_checkpoint,
    save_checkpoint,
)
from spkattr.world import SyntheticWorld


def tiny_config(**overrides):
    base = dict(
        decoder_layers=2,
        asr_keyed_layers=1,
        heads=2,
        model_dim=16,
        output_dim=8,
        vocab_size=12,
        max_positions=32,
        encoder_layers=2,
        input_dim=6,
    )
    base.update(overrides)
    return SpeakerModuleConfig(**base)


def make_inputs(cfg, n_tokens=6, n_frames=24, seed=0):
    rng = np.random.default_rng(seed)
    tokens = rng.integers(0, cfg.vocab_size, size=n_tokens)
    feats = rng.normal(size=(n_frames, cfg.input_dim))
    h_asr = rng.normal(size=(n_frames, cfg.model_dim))
    return tokens, feats, h_asr


class TestConfig:
    def test_bad_layer_split_rejected(self):
        with pytest.raises(ConfigError):
            tiny_config(asr_keyed_layers=3, decoder_layers=2)

    def test_heads_must_divide_dim(self):
        with pytest.raises(ConfigError):
            tiny_config(model_dim=10, heads=4)


class TestEncoder:
    def test_output_shape_matches_asr_features(self):
        cfg = tiny_config()
        module = SpeakerModule.init(cfg, seed=1)
        _, feats, h_asr = make_inputs(cfg)
        h_spk = module.encode(feats)
        assert h_spk.data.shape == h_asr.shape

    def test_deterministic(self):
        cfg = tiny_config()
        module = SpeakerModule.init(cfg, seed=1)
        _, feats, _ = make_inputs(cfg)
        a = module.encode(feats).data
        b = module.encode(feats).data
        assert np.array_equal(a, b)


class TestDecoderContracts:
    def test_j0_exactly_invariant_to_asr_features(self):
        cfg = tiny_config(asr_keyed_layers=0)
        module = SpeakerModule.init(cfg, seed=2)
        tokens, feats, h_asr = make_inputs(cfg)
        h_spk = module.encode(feats)
        base = module.decode(tokens, h_asr, h_spk).values.data
        rng = np.random.default_rng(9)
        for _ in range(5):
            other = module.decode(tokens, rng.normal(size=h_asr.shape), h_spk).values.data
            assert np.array_equal(base, other)

    def test_j1_sensitive_to_asr_features(self):
        cfg = tiny_config(asr_keyed_layers=1)
        module = SpeakerModule.init(cfg, seed=2)
        tokens, feats, h_asr = make_inputs(cfg)
        h_spk = module.encode(feats)
        base = module.decode(tokens, h_asr, h_spk).values.data
        rng = np.random.default_rng(10)
        changed = 0
        probes = 20
        for _ in range(probes):
            other = module.decode(tokens, rng.normal(size=h_asr.shape), h_spk).values.data
            if not np.allclose(base, other, atol=1e-12):
                changed += 1
        assert changed >= int(0.95 * probes)

    def test_full_asr_keyed_still_uses_speaker_values(self):
        cfg = tiny_config(asr_keyed_layers=2, decoder_layers=2)
        module = SpeakerModule.init(cfg, seed=3)
        tokens, feats, h_asr = make_inputs(cfg)
        h_spk = module.encode(feats)
        base = module.decode(tokens, h_asr, h_spk).values.data
        rng = np.random.default_rng(11)
        perturbed = ad.constant(h_spk.data + rng.normal(size=h_spk.data.shape))
        other = module.decode(tokens, h_asr, perturbed).values.data
        assert not np.allclose(base, other, atol=1e-9)

    def test_single_token_shape(self):
        cfg = tiny_config()
        module = SpeakerModule.init(cfg, seed=4)
        _, feats, h_asr = make_inputs(cfg, n_tokens=1)
        out = module.decode([3], h_asr, module.encode(feats))
        assert out.values.data.shape == (1, cfg.output_dim)

    def test_rows_floored(self):
        cfg = tiny_config()
        module = SpeakerModule.init(cfg, seed=5)
        tokens, feats, h_asr = make_inputs(cfg)
        out = module.decode(tokens, h_asr, module.encode(feats))
        assert np.linalg.norm(out.values.data, axis=1).min() >= 1e-8

    def test_token_out_of_vocab(self):
        cfg = tiny_config()
        module = SpeakerModule.init(cfg, seed=5)
        _, feats, h_asr = make_inputs(cfg)
        with pytest.raises(DataError):
            module.decode([cfg.vocab_size], h_asr, module.encode(feats))

    def test_parallel_decode_deterministic(self):
        cfg = tiny_config()
        module = SpeakerModule.init(cfg, seed=6)
        tokens, feats, h_asr = make_inputs(cfg)
        h_spk = module.encode(feats)
        a = module.decode(tokens, h_asr, h_spk).values.data
        b = module.decode(tokens, h_asr, h_spk).values.data
        assert np.array_equal(a, b)


class TestSharedEmbedding:
    def test_single_storage(self):
        cfg = tiny_config()
        module = SpeakerModule.init(cfg, seed=7)
        adapter = module.asr_embedding_adapter
        assert adapter.word_table is module.shared_embedding.word
        assert adapter.word_table is module.params["embed.word"]
        before = adapter.embed_tokens([0, 1]).copy()
        module.shared_embedding.word.data[0] += 1.0
        after = adapter.embed_tokens([0, 1])
        assert not np.array_equal(before, after)
        assert np.allclose(after[0] - before[0], np.ones(cfg.model_dim), atol=1e-12)
        assert np.array_equal(after[1], before[1])


class TestGradients:
    @pytest.mark.parametrize("seed", [0, 1])
    def test_encoder_grad_check_tiny(self, seed):
        cfg = tiny_config(encoder_layers=1, decoder_layers=1, model_dim=8, heads=2, input_dim=4)
        module = SpeakerModule.init(cfg, seed=seed)
        rng = np.random.default_rng(seed)
        feats = rng.normal(size=(6, cfg.input_dim))
        w = ad.constant(rng.normal(size=(6, cfg.model_dim)))

        def f():
            return ad.sum_all(ad.mul(module.encode(feats), w))

        report = ad.grad_check(
            f, module.params, eps=1e-5, tol=1e-4, max_coords_per_param=4,
            rng=np.random.default_rng(seed),
        )
        assert report.passed, report.summary()

    def test_full_model_grad_check_desk_config(self):
        # desk probe: 2 decoder layers, 1 ASR-keyed, 2 heads, dims 16/8, 6 tokens, 24 frames
        cfg = tiny_config()
        module = SpeakerModule.init(cfg, seed=8)
        tokens, feats, h_asr = make_inputs(cfg, n_tokens=6, n_frames=24, seed=8)
        rng = np.random.default_rng(8)
        target = rng.normal(size=(6, cfg.output_dim))

        def f():
            h_spk = module.encode(feats)
            emb = module.decode(tokens, h_asr, h_spk)
            t = EmbeddingSequence.from_array(target)
            return total_loss(emb, t).node

        report = ad.grad_check(
            f, module.params, eps=1e-5, tol=1e-4, max_coords_per_param=3,
            rng=np.random.default_rng(8),
        )
        assert report.passed, report.summary()


class TestAttributeTokens:
    def test_gold_and_decoded_paths_agree_when_decode_is_exact(self):
        world = SyntheticWorld(seed=21, noise_sigma=0.0)
        cfg = SpeakerModuleConfig(
            vocab_size=world.vocab_size,
            input_dim=world.feature_dim,
            model_dim=world.encoder_dim,
        )
        module = SpeakerModule.init(cfg, seed=9)
        tokens = [5, 1, 44, 12]
        feats, _ = world.synth_turn(2, tokens)
        out_decoded, emb_decoded = attribute_tokens(module, world, feats)
        out_gold, emb_gold = attribute_tokens(module, world, feats, tokens=tokens)
        assert np.array_equal(out_decoded.tokens, out_gold.tokens)
        assert np.array_equal(emb_decoded.values.data, emb_gold.values.data)

    def test_embedding_count_matches_tokens(self):
        world = SyntheticWorld(seed=22)
        cfg = SpeakerModuleConfig(
            vocab_size=world.vocab_size,
            input_dim=world.feature_dim,
            model_dim=world.encoder_dim,
        )
        module = SpeakerModule.init(cfg, seed=10)
        feats, _ = world.synth_turn(0, [1, 2, 3, 4, 5])
        out, emb = attribute_tokens(module, world, feats)
        assert emb.values.data.shape[0] == len(out.tokens)


class TestCheckpoint:
    def test_roundtrip_bit_exact_forward(self, tmp_path):
        cfg = tiny_config()
        module = SpeakerModule.init(cfg, seed=11)
        tokens, feats, h_asr = make_inputs(cfg)
        h_spk = module.encode(feats)
        before = module.decode(tokens, h_asr, h_spk).values.data
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, module, world_config={"seed": 3}, step=17)
        ck = load_checkpoint(path)
        assert ck.step == 17
        assert ck.world_config == {"seed": 3}
        rebuilt = ck.build_module()
        after = rebuilt.decode(tokens, h_asr, rebuilt.encode(feats)).values.data
        assert np.array_equal(before, after)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(DataError):
            load_checkpoint(path)
