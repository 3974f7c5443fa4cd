import math

import numpy as np
import pytest

from qabot.errors import ConfigError, ContractError, ShapeMismatch
from qabot.tensor import Tensor
from qabot.text import PAD_ID
from qabot.transformer import (
    StackOverride,
    TransformerConfig,
    TransformerModel,
    causal_mask,
    init_transformer_params,
    merge_heads,
    multi_head_attention,
    narrow_config,
    padding_mask,
    parameter_count,
    positional_encoding,
    scaled_dot_product_attention,
    split_heads,
)

from conftest import analytic_gradients


def micro_config(vocab=11, max_enc=7, max_dec=6, **overrides):
    defaults = dict(
        vocab_size=vocab,
        max_encoder_len=max_enc,
        max_decoder_len=max_dec,
        num_layers=2,
        d_model=8,
        ffn_units=16,
        num_heads=2,
        dropout=0.0,
    )
    defaults.update(overrides)
    return TransformerConfig(**defaults)


class TestPositionalEncoding:
    def test_position_zero_alternates_zero_one(self):
        table = positional_encoding(5, 8).data
        np.testing.assert_array_equal(table[0, 0::2], np.zeros(4))
        np.testing.assert_array_equal(table[0, 1::2], np.ones(4))

    def test_closed_form_d4_pos1(self):
        table = positional_encoding(2, 4).data
        expected = [math.sin(1.0), math.cos(1.0), math.sin(0.01), math.cos(0.01)]
        np.testing.assert_allclose(table[1], expected, atol=1e-12)
        np.testing.assert_allclose(table[1], [0.84147, 0.54030, 0.01000, 0.99995], atol=1e-5)

    def test_entries_bounded(self):
        table = positional_encoding(500, 64).data
        assert np.all(table >= -1.0) and np.all(table <= 1.0)

    def test_odd_width_rejected(self):
        with pytest.raises(ConfigError):
            positional_encoding(4, 5)

    def test_matches_formula_at_sampled_points(self):
        d_model = 32
        table = positional_encoding(60, d_model).data
        rng = np.random.default_rng(5)
        for _ in range(100):
            pos = int(rng.integers(0, 60))
            dim = int(rng.integers(0, d_model))
            i = dim // 2
            angle = pos / (10000.0 ** (2 * i / d_model))
            expected = math.sin(angle) if dim % 2 == 0 else math.cos(angle)
            assert abs(table[pos, dim] - expected) < 1e-12


class TestScaledDotProductAttention:
    def test_single_key_returns_value_row(self):
        q = Tensor([[0.3, -0.7]])
        k = Tensor([[1.0, 2.0]])
        v = Tensor([[5.0, 6.0, 7.0]])
        out, weights = scaled_dot_product_attention(q, k, v)
        np.testing.assert_array_equal(weights.data, [[1.0]])
        np.testing.assert_array_equal(out.data, v.data)

    def test_equal_scores_average_values(self):
        q = Tensor([[0.0]])
        k = Tensor([[1.0], [1.0]])
        v = Tensor([[1.0], [5.0]])
        out, weights = scaled_dot_product_attention(q, k, v)
        np.testing.assert_allclose(weights.data, [[0.5, 0.5]])
        np.testing.assert_allclose(out.data, [[3.0]])

    def test_closed_form_log3(self):
        # d_k = 1 so the 1/sqrt(d_k) scale is 1 and scores are q.k exactly
        q = Tensor([[math.log(3.0)]])
        k = Tensor([[0.0], [1.0]])
        v = Tensor([[1.0], [5.0]])
        out, weights = scaled_dot_product_attention(q, k, v)
        np.testing.assert_allclose(weights.data, [[0.25, 0.75]])
        np.testing.assert_allclose(out.data, [[4.0]])

    def test_mask_zeroes_blocked_weights(self, rng):
        q = Tensor(rng.standard_normal((1, 3, 4)))
        k = Tensor(rng.standard_normal((1, 5, 4)))
        v = Tensor(rng.standard_normal((1, 5, 2)))
        mask = np.ones((1, 3, 5), dtype=bool)
        mask[:, :, 3:] = False
        out, weights = scaled_dot_product_attention(q, k, v, mask)
        assert np.all(weights.data[:, :, 3:] < 1e-12)
        np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-9)

    def test_width_mismatch_rejected(self):
        with pytest.raises(ShapeMismatch):
            scaled_dot_product_attention(
                Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 3)))
            )


class TestCausalMask:
    def test_single_position(self):
        np.testing.assert_array_equal(causal_mask(1), [[True]])

    def test_triangle_counts(self):
        mask = causal_mask(3)
        assert mask.sum() == 6  # lower triangle of 3x3
        assert (~mask).sum() == 3  # n(n-1)/2 blocked

    def test_allowed_iff_key_not_after_query(self):
        mask = causal_mask(4)
        for i in range(4):
            for j in range(4):
                assert mask[i, j] == (j <= i)

    def test_conjunction_with_padding_mask(self, rng):
        ids = np.array([[4, 5, PAD_ID, PAD_ID]])
        causal = causal_mask(4)[None, :, :]
        pad = padding_mask(ids)[:, None, :]
        combined = causal & pad
        for i in range(4):
            for j in range(4):
                blocked_causal = j > i
                blocked_pad = ids[0, j] == PAD_ID
                assert combined[0, i, j] == (not (blocked_causal or blocked_pad))

    def test_size_validated(self):
        with pytest.raises(ContractError):
            causal_mask(0)


class TestMultiHeadAttention:
    def test_output_shape_contract(self, rng):
        d, heads = 12, 3
        x = Tensor(rng.standard_normal((2, 5, d)))
        mem = Tensor(rng.standard_normal((2, 7, d)))
        ws = [Tensor(rng.standard_normal((d, d))) for _ in range(4)]
        out = multi_head_attention(x, mem, *ws, num_heads=heads)
        assert out.shape == (2, 5, d)

    def test_single_head_equals_composed_projections(self, rng):
        d = 6
        x_q = Tensor(rng.standard_normal((1, 4, d)))
        x_kv = Tensor(rng.standard_normal((1, 5, d)))
        wq, wk, wv, wo = (Tensor(rng.standard_normal((d, d))) for _ in range(4))
        out = multi_head_attention(x_q, x_kv, wq, wk, wv, wo, num_heads=1)
        q = x_q.data @ wq.data
        k = x_kv.data @ wk.data
        v = x_kv.data @ wv.data
        ref, _ = scaled_dot_product_attention(Tensor(q), Tensor(k), Tensor(v))
        np.testing.assert_allclose(out.data, ref.data @ wo.data, atol=1e-12)

    def test_identity_projections_reduce_to_plain_attention(self, rng):
        d = 4
        x_q = Tensor(rng.standard_normal((1, 3, d)))
        x_kv = Tensor(rng.standard_normal((1, 6, d)))
        eye = Tensor(np.eye(d))
        out = multi_head_attention(x_q, x_kv, eye, eye, eye, eye, num_heads=1)
        ref, _ = scaled_dot_product_attention(x_q, x_kv, x_kv)
        np.testing.assert_allclose(out.data, ref.data, atol=1e-12)

    def test_head_split_merge_roundtrip(self, rng):
        x = Tensor(rng.standard_normal((2, 5, 8)))
        np.testing.assert_array_equal(merge_heads(split_heads(x, 4)).data, x.data)

    def test_divisibility_enforced(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 6)))
        with pytest.raises(ConfigError):
            split_heads(x, 4)


class TestConfig:
    def test_narrow_preset_overrides_both_stacks(self):
        cfg = narrow_config(100, 17, 12)
        assert cfg.resolve("encoder") == (128, 4, 0.3)
        assert cfg.resolve("decoder") == (128, 4, 0.3)
        # shared defaults stay at the global values
        assert cfg.num_layers == 2 and cfg.ffn_units == 512

    def test_defaults_match_global_preset(self):
        cfg = TransformerConfig(vocab_size=10, max_encoder_len=4, max_decoder_len=4)
        assert (cfg.num_layers, cfg.d_model, cfg.ffn_units) == (2, 256, 512)
        assert (cfg.num_heads, cfg.dropout) == (8, 0.1)

    def test_divisibility_validated(self):
        with pytest.raises(ConfigError):
            TransformerConfig(vocab_size=10, max_encoder_len=4, max_decoder_len=4,
                              d_model=10, num_heads=4)

    def test_dropout_range_validated(self):
        with pytest.raises(ConfigError):
            TransformerConfig(vocab_size=10, max_encoder_len=4, max_decoder_len=4,
                              dropout=1.0)

    def test_per_stack_override_validated(self):
        with pytest.raises(ConfigError):
            TransformerConfig(vocab_size=10, max_encoder_len=4, max_decoder_len=4,
                              encoder=StackOverride(d_model=6, num_heads=4))

    def test_json_roundtrip(self):
        cfg = narrow_config(55, 17, 12)
        assert TransformerConfig.from_json_dict(cfg.to_json_dict()) == cfg


class TestParameterCount:
    def test_closed_form_matches_actual(self):
        for cfg in (micro_config(), narrow_config(40, 9, 8)):
            params = init_transformer_params(cfg, seed=1)
            actual = sum(p.data.size for p in params.values())
            assert actual == parameter_count(cfg)

    def test_default_config_pinned(self):
        # frozen via independent arithmetic over the shape inventory
        cfg = TransformerConfig(vocab_size=2238, max_encoder_len=17, max_decoder_len=12)
        assert parameter_count(cfg) == 4_350_654


class TestForward:
    def test_logits_shape(self, rng):
        cfg = micro_config()
        model = TransformerModel(cfg, seed=3)
        src = rng.integers(0, cfg.vocab_size, size=(3, 7))
        dec = rng.integers(0, cfg.vocab_size, size=(3, 5))
        logits = model.forward(src, dec)
        assert logits.shape == (3, 5, cfg.vocab_size)

    def test_causality_probe(self, rng):
        cfg = micro_config()
        model = TransformerModel(cfg, seed=4)
        src = rng.integers(4, cfg.vocab_size, size=(1, 6))
        dec = rng.integers(4, cfg.vocab_size, size=(1, 6))
        base = model.forward(src, dec).data
        for t in range(1, 6):
            perturbed = dec.copy()
            perturbed[0, t] = (perturbed[0, t] - 4 + 1) % (cfg.vocab_size - 4) + 4
            out = model.forward(src, perturbed).data
            assert np.max(np.abs(out[:, :t] - base[:, :t])) < 1e-12
            assert np.max(np.abs(out[:, t:] - base[:, t:])) > 0

    def test_padding_probe(self, rng):
        cfg = micro_config()
        model = TransformerModel(cfg, seed=5)
        src = np.array([[1, 6, 7, 2, PAD_ID, PAD_ID, PAD_ID]])
        dec = np.array([[1, 8, 9, 2, PAD_ID]])
        src_mask = padding_mask(src)
        dec_mask = padding_mask(dec)
        base = model.forward(src, dec, src_key_mask=src_mask, dec_key_mask=dec_mask).data
        perturbed = src.copy()
        perturbed[0, 5] = 9  # token fed at a pad slot; mask pins the slot as padding
        out = model.forward(perturbed, dec, src_key_mask=src_mask, dec_key_mask=dec_mask).data
        non_pad = dec_mask[0]
        assert np.max(np.abs(out[0, non_pad] - base[0, non_pad])) < 1e-12

    def test_length_overflow_names_limit(self, rng):
        cfg = micro_config()
        model = TransformerModel(cfg, seed=1)
        long_src = rng.integers(0, cfg.vocab_size, size=(1, cfg.max_encoder_len + 1))
        with pytest.raises(ContractError) as exc:
            model.encoder_forward(long_src)
        assert str(cfg.max_encoder_len) in str(exc.value)
        long_dec = rng.integers(0, cfg.vocab_size, size=(1, cfg.max_decoder_len + 1))
        with pytest.raises(ContractError):
            model.decoder_forward(long_dec, model.encoder_forward(long_src[:, :3]), long_src[:, :3])

    def test_embedding_scale_convention(self, rng):
        # encoder input = table[ids] * sqrt(d_model) + positional encoding
        cfg = micro_config(num_layers=1)
        model = TransformerModel(cfg, seed=6)
        ids = np.array([[4, 5, 6]])
        x = model._embed(ids, model.params["enc_embed"], model._pe_enc, 8, 0.0, None)
        expected = model.params["enc_embed"].data[ids] * math.sqrt(8) + model._pe_enc.data[:3]
        np.testing.assert_allclose(x.data, expected, atol=1e-15)
        unscaled = model.params["enc_embed"].data[ids] + model._pe_enc.data[:3]
        assert np.max(np.abs(x.data - unscaled)) > 1e-6

    def test_dropout_changes_training_forward_only(self, rng):
        cfg = micro_config(dropout=0.2)
        model = TransformerModel(cfg, seed=2)
        src = rng.integers(0, cfg.vocab_size, size=(2, 5))
        dec = rng.integers(0, cfg.vocab_size, size=(2, 4))
        clean = model.forward(src, dec).data
        noisy = model.forward(src, dec, rng=np.random.default_rng(0)).data
        assert np.max(np.abs(clean - noisy)) > 0
        np.testing.assert_array_equal(clean, model.forward(src, dec).data)

    def test_narrow_preset_forward_runs(self, rng):
        cfg = narrow_config(30, 9, 8)
        model = TransformerModel(cfg, seed=8)
        src = rng.integers(0, 30, size=(2, 9))
        dec = rng.integers(0, 30, size=(2, 8))
        assert model.forward(src, dec).shape == (2, 8, 30)


class TestEndToEndGradients:
    def test_micro_model_matches_finite_differences(self, rng):
        from qabot.training import cross_entropy_loss

        cfg = micro_config()
        model = TransformerModel(cfg, seed=7)
        src = np.array([[1, 4, 5, 2, PAD_ID]])
        dec_in = np.array([[1, 6, 7, 8]])
        targets = np.array([[6, 7, 8, 2]])

        names = sorted(model.params)
        tensors = [model.params[n] for n in names]

        def build(*_):
            logits = model.forward(src, dec_in)
            return cross_entropy_loss(logits, targets, PAD_ID)

        def value(*_):
            return build().item()

        analytic = analytic_gradients(build, tensors)

        coord_rng = np.random.default_rng(123)
        checked = 0
        h = 1e-5
        for _ in range(24):
            name = names[int(coord_rng.integers(len(names)))]
            t = model.params[name]
            flat = t.data.reshape(-1)
            idx = int(coord_rng.integers(flat.size))
            original = flat[idx]
            flat[idx] = original + h
            up = value()
            flat[idx] = original - h
            down = value()
            flat[idx] = original
            numeric = (up - down) / (2 * h)
            analytic_val = analytic[names.index(name)].reshape(-1)[idx]
            denom = max(abs(numeric), abs(analytic_val), 1e-3)
            assert abs(numeric - analytic_val) / denom < 1e-3, (
                f"{name}[{idx}]: analytic {analytic_val} vs fd {numeric}"
            )
            checked += 1
        assert checked >= 20
