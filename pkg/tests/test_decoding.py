"""Beam search, ensemble averaging, blinding: oracles and determinism."""

import itertools

import numpy as np
import pytest

from tinymmt.config import ModelConfig
from tinymmt.decoding import (DecodeError, Hypothesis, beam_search, check_ensemble,
                              ensemble_step, translate_corpus)
from tinymmt.model import Transformer
from tinymmt.vocab import SPECIAL_TOKENS, Vocabulary

VOCAB = Vocabulary(list(SPECIAL_TOKENS) + ["x", "y", "z", "w"])


def tiny_model(seed=0, fusion="none", **overrides):
    base = dict(n_layers=1, d_model=8, n_heads=2, d_ff=16, dropout=0.0,
                visual_dim=4, fusion=fusion, max_len=24, batch_tokens=64)
    base.update(overrides)
    return Transformer(ModelConfig(**base), VOCAB, seed=seed)


class ScriptedSession:
    def __init__(self, table, prefix=()):
        self.table = table
        self.prefix = tuple(prefix)

    def clone(self):
        return ScriptedSession(self.table, self.prefix)

    def step(self, token):
        self.prefix = self.prefix + (token,)
        return self.table(self.prefix)


class ScriptedModel:
    """Hand-set conditional distributions behind the decoding model protocol."""

    def __init__(self, table, vocab=VOCAB):
        self.table = table
        self.vocab = vocab
        self.config = ModelConfig(n_layers=1, d_model=8, n_heads=2, d_ff=16,
                                  dropout=0.0, visual_dim=4, fusion="none", max_len=16)

    def encode_array(self, src_ids, visual=None):
        return None

    def session(self, enc, visual=None):
        return ScriptedSession(self.table)

    def _encoder_visual(self):
        return False

    def _decoder_visual(self):
        return False


def garden_path_table(prefix):
    """Greedy goes wrong: 'x' looks best first but 'y eos' wins overall."""
    n = len(VOCAB)
    eos, x, y = VOCAB.eos_id, VOCAB.id("x"), VOCAB.id("y")
    probs = np.full(n, 1e-9)
    if prefix[-1] == VOCAB.bos_id:
        probs[x], probs[y] = 0.55, 0.45
    elif prefix[-1] == y:
        probs[eos] = 0.9
        probs[x] = 0.1
    else:
        probs[x], probs[eos] = 0.6, 0.4
    return probs / probs.sum()


def exhaustive_best(model, alpha, max_len=4):
    """Oracle: enumerate every EOS-terminated sequence up to max_len."""
    eos, bos = model.vocab.eos_id, model.vocab.bos_id
    candidates = []
    tokens = range(len(model.vocab))
    for length in range(1, max_len + 1):
        for seq in itertools.product(tokens, repeat=length):
            if seq[-1] != eos or eos in seq[:-1]:
                continue
            session = model.session(None)
            log_prob = 0.0
            dist = session.step(bos)
            for t in seq:
                log_prob += float(np.log(dist[t]))
                dist = session.step(t)
            candidates.append((log_prob / len(seq) ** alpha, list(seq)))
    candidates.sort(key=lambda c: (-c[0], c[1]))
    return candidates[0]


class TestBeamSearch:
    def test_width_one_equals_stepwise_argmax(self):
        model = tiny_model(seed=1)
        src = [VOCAB.id("x"), VOCAB.id("y"), VOCAB.id("z")]
        best = beam_search(model, src, width=1, alpha=0.6)
        enc = model.encode_array(src)
        session = model.session(enc)
        dist = session.step(VOCAB.bos_id)
        greedy = []
        for _ in range(model.config.max_len - 1):
            token = int(np.argmax(dist))
            greedy.append(token)
            if token == VOCAB.eos_id:
                break
            dist = session.step(token)
        assert best.tokens == greedy

    def test_deterministic(self):
        model = tiny_model(seed=2)
        src = [VOCAB.id("z"), VOCAB.id("w")]
        runs = [beam_search(model, src, width=3).tokens for _ in range(3)]
        assert runs[0] == runs[1] == runs[2]

    def test_beam_two_recovers_exhaustive_optimum(self):
        """Hand-set garden-path distribution; oracle enumerates all sequences <= 4."""
        model = ScriptedModel(garden_path_table)
        oracle_score, oracle_seq = exhaustive_best(model, alpha=0.6, max_len=4)
        best = beam_search([model], [VOCAB.id("x")], width=2, alpha=0.6, max_len=4)
        assert best.tokens == oracle_seq
        assert best.normalized(0.6) == pytest.approx(oracle_score, rel=1e-12)
        # and the garden path is real: greedy does not find it
        greedy = beam_search([model], [VOCAB.id("x")], width=1, alpha=0.6, max_len=4)
        assert greedy.tokens != oracle_seq

    def test_width_monotonicity_on_toy_model(self):
        """Regression property: wider beams never find a worse normalized score."""
        model = tiny_model(seed=3)
        for src in ([VOCAB.id("x")], [VOCAB.id("y"), VOCAB.id("z")],
                    [VOCAB.id("w"), VOCAB.id("w"), VOCAB.id("x")]):
            scores = [beam_search(model, src, width=w, alpha=0.6).normalized(0.6)
                      for w in (1, 2, 3, 4)]
            for lo, hi in zip(scores, scores[1:]):
                assert hi >= lo - 1e-12

    def test_invalid_width_rejected(self):
        with pytest.raises(DecodeError, match="width"):
            beam_search(tiny_model(), [VOCAB.id("x")], width=0)

    def test_max_len_caps_output(self):
        model = tiny_model(seed=4)
        best = beam_search(model, [VOCAB.id("x")], width=2, max_len=3)
        assert len(best.tokens) <= 3


class TestEnsemble:
    def test_identical_members_match_single_distribution(self):
        model = tiny_model(seed=5)
        src = [VOCAB.id("x"), VOCAB.id("z")]
        enc = model.encode_array(src)
        prefix = [VOCAB.bos_id, VOCAB.id("y")]
        single = model.next_distribution(prefix, enc)
        copies = [model, model, model]
        averaged = ensemble_step(copies, prefix, [enc, enc, enc])
        np.testing.assert_allclose(averaged, single, atol=1e-15)

    def test_two_member_mean_is_elementwise_average(self):
        a, b = tiny_model(seed=6), tiny_model(seed=7)
        src = [VOCAB.id("y")]
        enc_a, enc_b = a.encode_array(src), b.encode_array(src)
        prefix = [VOCAB.bos_id]
        p = a.next_distribution(prefix, enc_a)
        q = b.next_distribution(prefix, enc_b)
        averaged = ensemble_step([a, b], prefix, [enc_a, enc_b])
        np.testing.assert_array_equal(averaged, (p + q) / 2.0)

    def test_mean_distribution_sums_to_one(self):
        models = [tiny_model(seed=s) for s in (8, 9, 10)]
        src = [VOCAB.id("w")]
        encs = [m.encode_array(src) for m in models]
        averaged = ensemble_step(models, [VOCAB.bos_id], encs)
        assert abs(averaged.sum() - 1.0) < 1e-12

    def test_vocabulary_mismatch_rejected(self):
        other_vocab = Vocabulary(list(SPECIAL_TOKENS) + ["x", "y", "z", "q"])
        a = tiny_model(seed=11)
        b = Transformer(a.config, other_vocab, seed=11)
        with pytest.raises(DecodeError, match="vocabular"):
            check_ensemble([a, b])

    def test_fusion_mode_mismatch_rejected(self):
        a = tiny_model(seed=12)
        b = tiny_model(seed=12, fusion="img_w")
        with pytest.raises(DecodeError, match="fusion"):
            check_ensemble([a, b])

    def test_empty_ensemble_rejected(self):
        with pytest.raises(DecodeError, match="at least one"):
            check_ensemble([])

    def test_ensemble_beam_text_equals_single_model(self):
        model = tiny_model(seed=13)
        sources = [[VOCAB.id("x"), VOCAB.id("y")], [VOCAB.id("z")]]
        single = translate_corpus(model, sources, width=3)
        tripled = translate_corpus([model, model, model], sources, width=3)
        assert single == tripled


class TestBlinding:
    def test_text_only_model_ignores_feature_provider(self):
        model = tiny_model(seed=14)
        sources = [[VOCAB.id("x")], [VOCAB.id("y")]]
        plain = translate_corpus(model, sources, visuals=None, width=2)
        with_provider = translate_corpus(model, sources,
                                         visuals=[np.ones(4), np.ones(4)], width=2)
        assert plain == with_provider

    def test_zeroed_projection_blinding_is_byte_identical(self):
        model = tiny_model(seed=15, fusion="img_w")
        model.params["fusion.img_w.weight"].data[:] = 0.0
        rng = np.random.default_rng(16)
        sources = [[VOCAB.id("x"), VOCAB.id("z")], [VOCAB.id("w")]]
        feats = [rng.normal(size=4) for _ in sources]
        mean = np.stack(feats).mean(axis=0)
        real = translate_corpus(model, sources, visuals=feats, width=2)
        blind = translate_corpus(model, sources, visuals=[mean, mean], width=2)
        assert real == blind


class TestHypothesis:
    def test_normalized_score_divides_by_length_power(self):
        h = Hypothesis(tokens=[5, 6, 3], log_prob=-3.0)
        assert h.normalized(0.6) == pytest.approx(-3.0 / 3 ** 0.6, rel=1e-12)
        assert h.normalized(0.0) == -3.0
