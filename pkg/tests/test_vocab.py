"""Vocabulary: special-token layout, encode/decode, deterministic build."""

import pytest

from tinymmt.config import ModelConfig
from tinymmt.vocab import (SPECIAL_TOKENS, Vocabulary, domain_label, language_tag)


class TestVocabulary:
    def test_specials_occupy_lowest_ids_in_fixed_order(self):
        vocab = Vocabulary.build([["b", "a", "b"]])
        assert vocab.tokens[:len(SPECIAL_TOKENS)] == list(SPECIAL_TOKENS)
        assert vocab.pad_id == 0 and vocab.unk_id == 1
        assert vocab.bos_id == 2 and vocab.eos_id == 3

    def test_body_sorted_by_frequency_then_token(self):
        vocab = Vocabulary.build([["b", "a", "b", "c", "a", "b"]])
        body = vocab.tokens[len(SPECIAL_TOKENS):]
        assert body == ["b", "a", "c"]

    def test_build_is_deterministic(self):
        lines = [["x", "y"], ["y", "z"], ["z", "y"]]
        assert Vocabulary.build(lines).tokens == Vocabulary.build(list(lines)).tokens

    def test_unknown_tokens_encode_to_unk(self):
        vocab = Vocabulary.build([["a"]])
        assert vocab.encode(["a", "never-seen"]) == [vocab.id("a"), vocab.unk_id]

    def test_decode_strips_structural_specials_only(self):
        vocab = Vocabulary.build([["a"]])
        ids = [vocab.bos_id, vocab.id("a"), vocab.index["<TO_DE>"], vocab.eos_id,
               vocab.pad_id]
        assert vocab.decode(ids) == ["a", "<TO_DE>"]
        assert vocab.decode(ids, strip_special=False) == \
            ["<BOS>", "a", "<TO_DE>", "<EOS>", "<PAD>"]

    def test_missing_special_prefix_rejected(self):
        with pytest.raises(ValueError, match="special"):
            Vocabulary(["a", "b"])

    def test_duplicate_tokens_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            Vocabulary(list(SPECIAL_TOKENS) + ["a", "a"])

    def test_save_load_roundtrip(self, tmp_path):
        vocab = Vocabulary.build([["hund", "katze"]])
        vocab.save(tmp_path / "v.txt")
        assert Vocabulary.load(tmp_path / "v.txt").tokens == vocab.tokens

    def test_tag_lookups(self):
        assert language_tag("fr") == "<TO_FR>"
        assert domain_label("subtitles") == "<DOM_SUB>"
        with pytest.raises(ValueError):
            language_tag("en")


class TestModelConfigValidation:
    def test_heads_must_divide_width(self):
        with pytest.raises(ValueError, match="divisible"):
            ModelConfig(d_model=30, n_heads=4)

    def test_width_must_be_even_for_sinusoids(self):
        with pytest.raises(ValueError, match="even"):
            ModelConfig(d_model=9, n_heads=3)

    def test_dims_must_be_positive(self):
        with pytest.raises(ValueError, match="positive"):
            ModelConfig(d_ff=0)
        with pytest.raises(ValueError, match="positive"):
            ModelConfig(visual_dim=-1)

    def test_zero_layers_allowed(self):
        assert ModelConfig(n_layers=0).n_layers == 0
        with pytest.raises(ValueError):
            ModelConfig(n_layers=-1)

    def test_rate_ranges(self):
        with pytest.raises(ValueError, match="dropout"):
            ModelConfig(dropout=1.0)
        with pytest.raises(ValueError, match="label_smoothing"):
            ModelConfig(label_smoothing=-0.1)

    def test_unknown_fusion_mode_rejected(self):
        with pytest.raises(ValueError, match="fusion"):
            ModelConfig(fusion="dual_attention")

    def test_unknown_dict_keys_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            ModelConfig.from_dict({"d_model": 32, "n_head": 4})
