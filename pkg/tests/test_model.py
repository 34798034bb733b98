"""Transformer building blocks, masking invariants, and the smoothed loss."""

import json
import math
import pathlib

import numpy as np
import pytest

from tinymmt import autodiff as ad
from tinymmt.autodiff import Tensor, grad_check
from tinymmt.config import ModelConfig
from tinymmt.model import (Transformer, attention, causal_mask, feed_forward,
                           label_smoothed_loss, multi_head_attention,
                           positional_encoding, sublayer_wrap)
from tinymmt.vocab import SPECIAL_TOKENS, Vocabulary

GOLDEN = pathlib.Path(__file__).parent / "golden"


def small_vocab(extra=("a", "b", "c", "d")):
    return Vocabulary(list(SPECIAL_TOKENS) + list(extra))


def small_config(**overrides):
    base = dict(n_layers=2, d_model=16, n_heads=2, d_ff=32, dropout=0.0,
                visual_dim=4, fusion="none", max_len=32, batch_tokens=64)
    base.update(overrides)
    return ModelConfig(**base)


class TestPositionalEncoding:
    def test_position_zero(self):
        pe = positional_encoding(4, 8)
        np.testing.assert_array_equal(pe[0, 0::2], np.zeros(4))
        np.testing.assert_array_equal(pe[0, 1::2], np.ones(4))

    def test_bounded(self):
        pe = positional_encoding(50, 16)
        assert pe.min() >= -1.0 and pe.max() <= 1.0

    def test_first_position_first_dimension_is_sin_one(self):
        assert positional_encoding(2, 8)[1, 0] == pytest.approx(math.sin(1.0), abs=1e-12)

    def test_odd_width_rejected(self):
        with pytest.raises(ValueError, match="even"):
            positional_encoding(4, 7)


class TestAttention:
    def test_single_key_returns_its_value(self):
        q = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
        k = Tensor(np.random.default_rng(1).normal(size=(1, 4)))
        v = Tensor([[1.0, 2.0, 3.0, 4.0]])
        out = attention(q, k, v)
        for row in out.data:
            np.testing.assert_array_equal(row, v.data[0])

    def test_equal_scores_average_uniformly(self):
        q = Tensor(np.zeros((1, 4)))
        k = Tensor(np.zeros((3, 4)))
        v = Tensor(np.arange(12.0).reshape(3, 4))
        out = attention(q, k, v)
        np.testing.assert_allclose(out.data[0], v.data.mean(axis=0), atol=1e-12)

    def test_masked_key_gets_zero_weight(self):
        q = Tensor(np.ones((1, 4)))
        k = Tensor(np.random.default_rng(2).normal(size=(2, 4)))
        v = Tensor([[5.0, 5.0, 5.0, 5.0], [-9.0, -9.0, -9.0, -9.0]])
        out = attention(q, k, v, mask=np.array([[False, True]]))
        np.testing.assert_array_equal(out.data[0], v.data[0])

    def test_mask_shape_mismatch_rejected(self):
        q = k = v = Tensor(np.ones((2, 4)))
        with pytest.raises(ad.ShapeError, match="mask"):
            attention(q, k, v, mask=np.ones((2, 3), dtype=bool))


class TestMultiHead:
    def identity_params(self, d):
        params = {}
        for tag in ("q", "k", "v", "o"):
            params[f"mh.{tag}_weight"] = Tensor(np.eye(d))
            params[f"mh.{tag}_bias"] = Tensor(np.zeros(d))
        return params

    def test_single_head_identity_projection_reduces_to_attention(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 5, 6))
        out = multi_head_attention(self.identity_params(6), "mh", 1,
                                   Tensor(x), Tensor(x))
        plain = attention(Tensor(x[0]), Tensor(x[0]), Tensor(x[0]))
        np.testing.assert_allclose(out.data[0], plain.data, atol=1e-12)

    def test_output_shape_contract(self):
        rng = np.random.default_rng(4)
        params = {}
        for tag in ("q", "k", "v", "o"):
            params[f"mh.{tag}_weight"] = Tensor(rng.normal(size=(64, 64)))
            params[f"mh.{tag}_bias"] = Tensor(np.zeros(64))
        out = multi_head_attention(params, "mh", 4, Tensor(rng.normal(size=(1, 5, 64))),
                                   Tensor(rng.normal(size=(1, 7, 64))))
        assert out.shape == (1, 5, 64)

    def test_head_count_must_divide_width(self):
        x = Tensor(np.ones((1, 2, 6)))
        with pytest.raises(ad.ShapeError, match="heads"):
            multi_head_attention(self.identity_params(6), "mh", 4, x, x)

    def test_gradient_through_two_head_layer(self):
        rng = np.random.default_rng(5)
        params = {}
        for tag in ("q", "k", "v", "o"):
            params[f"mh.{tag}_weight"] = Tensor(rng.uniform(-1, 1, (6, 6)),
                                                requires_grad=True)
            params[f"mh.{tag}_bias"] = Tensor(rng.uniform(-1, 1, 6), requires_grad=True)
        x = Tensor(rng.uniform(-1, 1, (1, 4, 6)))
        def build():
            return ad.tensor_sum(ad.tanh(multi_head_attention(params, "mh", 2, x, x)))
        report = grad_check(build, params, h=1e-5, tol=1e-5)
        assert report.passed, str(report)


class TestFeedForward:
    def make_params(self, w1, b1, w2, b2):
        return {"ff.w1": Tensor(w1), "ff.b1": Tensor(b1),
                "ff.w2": Tensor(w2), "ff.b2": Tensor(b2)}

    def test_zero_first_layer_gives_second_bias(self):
        params = self.make_params(np.zeros((4, 8)), np.zeros(8),
                                  np.ones((8, 4)), np.array([1.0, 2.0, 3.0, 4.0]))
        out = feed_forward(params, "ff", Tensor(np.random.default_rng(0).normal(size=(2, 3, 4))))
        for row in out.data.reshape(-1, 4):
            np.testing.assert_array_equal(row, [1.0, 2.0, 3.0, 4.0])

    def test_saturated_relu_gives_second_bias(self):
        params = self.make_params(np.ones((4, 8)), np.full(8, -100.0),
                                  np.ones((8, 4)), np.array([5.0, 6.0, 7.0, 8.0]))
        out = feed_forward(params, "ff", Tensor(np.full((1, 2, 4), 1.0)))
        for row in out.data.reshape(-1, 4):
            np.testing.assert_array_equal(row, [5.0, 6.0, 7.0, 8.0])

    def test_gradient(self):
        rng = np.random.default_rng(6)
        params = {name: Tensor(rng.uniform(-1, 1, shape), requires_grad=True)
                  for name, shape in [("ff.w1", (4, 8)), ("ff.b1", (8,)),
                                      ("ff.w2", (8, 4)), ("ff.b2", (4,))]}
        x = Tensor(rng.uniform(-1, 1, (3, 4)))
        report = grad_check(lambda: ad.tensor_sum(ad.tanh(feed_forward(params, "ff", x))),
                            params, h=1e-5, tol=1e-5)
        assert report.passed, str(report)


class TestSublayerWrap:
    def norm_params(self, d, gain=None):
        return {"n.gain": Tensor(np.ones(d) if gain is None else gain),
                "n.bias": Tensor(np.zeros(d))}

    def test_zero_sublayer_is_post_norm_of_input(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(2, 3, 6)))
        params = self.norm_params(6)
        out = sublayer_wrap(params, "n", x, lambda h: ad.scale(h, 0.0))
        expected = ad.layer_norm(x, params["n.gain"], params["n.bias"])
        np.testing.assert_array_equal(out.data, expected.data)

    def test_shape_preserved(self):
        x = Tensor(np.random.default_rng(8).normal(size=(2, 5, 6)))
        out = sublayer_wrap(self.norm_params(6), "n", x, lambda h: ad.tanh(h))
        assert out.shape == x.shape

    def test_gradient_reaches_input_through_saturated_sublayer(self):
        """Residual path keeps gradients alive even when the sublayer saturates."""
        rng = np.random.default_rng(9)
        params = self.norm_params(4)
        x = Tensor(rng.uniform(-1, 1, (1, 3, 4)), requires_grad=True, name="x")
        def build():
            saturated = lambda h: ad.sigmoid(ad.scale(h, 60.0))
            return ad.tensor_sum(ad.tanh(sublayer_wrap(params, "n", x, saturated)))
        report = grad_check(build, {"x": x}, h=1e-6, tol=1e-4)
        assert report.passed, str(report)
        build().backward()
        assert np.abs(x.grad).max() > 1e-3


class TestLabelSmoothedLoss:
    def test_zero_smoothing_is_plain_cross_entropy(self):
        rng = np.random.default_rng(10)
        logits = rng.normal(size=(1, 3, 6))
        gold = np.array([[1, 4, 2]])
        loss = label_smoothed_loss(Tensor(logits), gold, smoothing=0.0)
        log_probs = logits - np.log(np.exp(logits).sum(-1, keepdims=True))
        expected = -np.mean([log_probs[0, t, gold[0, t]] for t in range(3)])
        assert loss.item() == pytest.approx(expected, rel=1e-12)

    def test_uniform_logits_vocab_four_gives_log_four(self):
        loss = label_smoothed_loss(Tensor(np.zeros((1, 2, 4))), np.array([[0, 3]]),
                                   smoothing=0.0)
        assert loss.item() == pytest.approx(math.log(4.0), rel=1e-12)

    def test_smoothed_loss_matches_hand_computation(self):
        """Vocabulary of 5 with no pad; +20-margin one-hot-correct logits.

        Hand oracle: target (1-eps) on gold, eps/4 on the other four; loss
        is the dot of that target with -log softmax(logits).
        """
        eps = 0.1
        logits = np.full((1, 1, 5), 0.0)
        logits[0, 0, 2] = 20.0
        loss = label_smoothed_loss(Tensor(logits), np.array([[2]]), smoothing=eps)
        log_z = math.log(math.exp(20.0) + 4.0)
        hand = -((1 - eps) * (20.0 - log_z) + 4 * (eps / 4) * (0.0 - log_z))
        assert loss.item() == pytest.approx(hand, rel=1e-12)

    def test_pad_positions_excluded_and_pad_gets_no_mass(self):
        rng = np.random.default_rng(11)
        logits = rng.normal(size=(1, 3, 6))
        with_pad = label_smoothed_loss(Tensor(logits), np.array([[1, 4, 0]]),
                                       smoothing=0.1, pad_id=0)
        only_real = label_smoothed_loss(Tensor(logits[:, :2]), np.array([[1, 4]]),
                                        smoothing=0.1, pad_id=0)
        assert with_pad.item() == pytest.approx(only_real.item(), rel=1e-12)

    def test_all_pad_batch_rejected(self):
        with pytest.raises(ValueError, match="padding"):
            label_smoothed_loss(Tensor(np.zeros((1, 2, 6))), np.array([[0, 0]]),
                                smoothing=0.1, pad_id=0)


class TestEncoderDecoderContracts:
    def test_encoder_output_length_matches_source(self):
        model = Transformer(small_config(), small_vocab(), seed=0)
        enc = model.encode(np.array([[10, 11, 12]]))
        assert enc.states.shape == (1, 3, 16)

    def test_img_w_adds_one_attendable_position(self):
        model = Transformer(small_config(fusion="img_w"), small_vocab(), seed=0)
        enc = model.encode(np.array([[10, 11, 12]]), visual=np.ones((1, 4)))
        assert enc.states.shape == (1, 4, 16)
        assert enc.real.all()

    def test_zero_layer_encoder_returns_embedded_inputs(self):
        model = Transformer(small_config(n_layers=0), small_vocab(), seed=0)
        ids = np.array([[10, 11]])
        enc = model.encode(ids)
        expected = model.params["embed.table"].data[ids] * 4.0 + model.pe[:2]
        np.testing.assert_array_equal(enc.states.data, expected)

    def test_unknown_token_id_rejected(self):
        model = Transformer(small_config(), small_vocab(), seed=0)
        with pytest.raises(ValueError, match="out of range"):
            model.encode(np.array([[999]]))

    def test_decode_distribution_sums_to_one(self):
        model = Transformer(small_config(), small_vocab(), seed=1)
        enc = model.encode_array([10, 11, 12])
        probs = model.next_distribution([model.vocab.bos_id, 10], enc)
        assert abs(probs.sum() - 1.0) < 1e-12
        assert probs.min() >= 0.0

    def test_prefix_beyond_max_len_rejected(self):
        model = Transformer(small_config(max_len=4), small_vocab(), seed=1)
        enc = model.encode_array([10, 11])
        session = model.session(enc)
        for token in (2, 10, 11, 10):
            session.step(token)
        with pytest.raises(ValueError, match="max_len"):
            session.step(10)

    def test_future_perturbation_leaves_earlier_positions_exact(self):
        model = Transformer(small_config(), small_vocab(), seed=2)
        enc = model.encode(np.array([[10, 11, 12]]))
        base = model.decode_train(np.array([[2, 10, 11, 12]]), enc)
        perturbed = model.decode_train(np.array([[2, 10, 11, 13]]), enc)
        np.testing.assert_array_equal(base.data[0, :3], perturbed.data[0, :3])

    def test_incremental_matches_full_prefix_recompute_bitwise(self):
        model = Transformer(small_config(), small_vocab(), seed=3)
        enc = model.encode_array([10, 11, 12, 13])
        prefix = [model.vocab.bos_id, 10, 11, 12, 13, 10]
        session = model.session(enc)
        stepwise = [session.step(t) for t in prefix]
        for j in range(1, len(prefix) + 1):
            replay = model.next_distribution(prefix[:j], enc)
            assert np.array_equal(replay, stepwise[j - 1])

    def test_causal_exactness_prefix_vs_extension(self):
        """Outputs at positions <= |p| are bit-identical for p and p.x."""
        model = Transformer(small_config(), small_vocab(), seed=4)
        enc = model.encode_array([10, 11])
        short = model.session(enc)
        long = model.session(enc)
        short_out = [short.step(t) for t in [2, 10, 11]]
        long_out = [long.step(t) for t in [2, 10, 11, 12, 13]]
        for a, b in zip(short_out, long_out):
            assert np.array_equal(a, b)

    def test_padding_invariance_is_exact(self):
        model = Transformer(small_config(), small_vocab(), seed=5)
        src = np.array([[10, 11, 12]])
        padded = np.array([[10, 11, 12, 0, 0, 0, 0, 0, 0]])
        real = np.array([[True] * 3 + [False] * 6])
        enc_plain = model.encode(src)
        enc_padded = model.encode(padded, real)
        np.testing.assert_array_equal(enc_plain.states.data[0],
                                      enc_padded.states.data[0, :3])
        tgt = np.array([[2, 10, 11]])
        tgt_padded = np.array([[2, 10, 11, 0, 0]])
        out_plain = model.decode_train(tgt, enc_plain)
        out_padded = model.decode_train(tgt_padded, enc_padded)
        np.testing.assert_array_equal(out_plain.data[0], out_padded.data[0, :3])

    def test_batched_and_incremental_paths_agree(self):
        model = Transformer(small_config(), small_vocab(), seed=6)
        src = [10, 11, 12]
        prefix = [2, 10, 11]
        logits = model.decode_train(np.array([prefix]), model.encode(np.array([src])))
        batched = ad.softmax_array(logits.data[0, -1])
        incremental = model.next_distribution(prefix, model.encode_array(src))
        np.testing.assert_allclose(batched, incremental, atol=1e-12)

    def test_training_dropout_requires_generator(self):
        model = Transformer(small_config(dropout=0.5), small_vocab(), seed=7)
        with pytest.raises(ValueError, match="generator"):
            model.encode(np.array([[10, 11]]), train=True)

    def test_visual_present_iff_the_path_uses_it(self):
        from tinymmt.fusion import FeatureError
        text_model = Transformer(small_config(), small_vocab(), seed=9)
        with pytest.raises(FeatureError, match="does not use"):
            text_model.encode(np.array([[10]]), visual=np.ones((1, 4)))
        imgw = Transformer(small_config(fusion="img_w"), small_vocab(), seed=9)
        with pytest.raises(FeatureError, match="requires"):
            imgw.encode(np.array([[10]]))
        # decoder-side fusion: the encoder does not take the feature
        trg = Transformer(small_config(fusion="trg_mul"), small_vocab(), seed=9)
        with pytest.raises(FeatureError, match="does not use"):
            trg.encode(np.array([[10]]), visual=np.ones((1, 4)))
        with pytest.raises(FeatureError, match="requires"):
            trg.decode_train(np.array([[2]]), trg.encode(np.array([[10]])))

    def test_empty_prefix_rejected(self):
        model = Transformer(small_config(), small_vocab(), seed=10)
        enc = model.encode_array([10])
        with pytest.raises(ValueError, match="BOS"):
            model.next_distribution([], enc)

    def test_quick_full_model_gradient_check(self):
        """Smaller cousin of the acceptance gradient gate (1 layer, width 8)."""
        model = Transformer(small_config(n_layers=1, d_model=8, d_ff=16), small_vocab(), seed=8)
        src, tgt = np.array([[10, 11]]), np.array([[11, 3]])
        def build():
            return model.forward_loss(src, np.ones_like(src, bool),
                                      tgt, np.ones_like(tgt, bool))
        report = grad_check(build, model.params, h=1e-5, tol=1e-4)
        assert report.passed, str(report)


class TestTrainingCurve:
    def test_loss_decreases_monotonically_and_matches_golden(self, toy_task):
        """First 50 steps on the fixed toy corpus, fixed seed, no dropout.

        The whole corpus fits one batch, so every step sees the same data
        and the curve is strictly decreasing. The golden file pins the
        exact curve from the reference run; the loose tolerance absorbs
        BLAS rounding differences across platforms while still catching
        real regressions.
        """
        from tinymmt import training
        samples = toy_task.samples(with_visuals=False)
        config = toy_task.model_config("none", dropout=0.0, batch_tokens=2048)
        result = training.train(samples, config, seed=21, steps=50, vocab=toy_task.vocab,
                                warmup_steps=400, log_every=1)
        losses = [r["loss"] for r in result.history]
        assert len(losses) == 50
        assert all(b < a for a, b in zip(losses, losses[1:])), "loss not monotone"
        golden = json.loads((GOLDEN / "loss_curve.json").read_text())
        np.testing.assert_allclose(losses, golden, rtol=1e-6)
