"""Balanced BPE: learning oracle, hyphen boundaries, roundtrip, model files."""

import pytest
from hypothesis import given, settings, strategies as st

from tinymmt import bpe
from tinymmt.bpe import (BpeError, BpeModel, apply, balance_counts, detokenize,
                         hyphen_segments, learn, merge_counts, word_counts)
from tinymmt.vocab import SPECIAL_TOKENS

WORDS = st.text(alphabet="abcdef-", min_size=1, max_size=10).filter(
    lambda w: w.strip("-") == w or w == "-")
TOKEN_LINES = st.lists(st.one_of(WORDS, st.sampled_from(list(SPECIAL_TOKENS))),
                       min_size=0, max_size=12)


def oracle_learn(counts: dict, target_size: int) -> list:
    """Naive reference BPE: full pair recount from scratch every iteration."""
    corpus = []
    for word in sorted(counts):
        weight = counts[word]
        segment = []
        for ch in word:          # independent hyphen pre-split
            if ch == "-":
                if segment:
                    corpus.append((segment, weight))
                corpus.append((["-"], weight))
                segment = []
            else:
                segment.append(ch)
        if segment:
            corpus.append((segment, weight))
    merges = []
    while len(merges) < target_size:
        pair_counts = {}
        for symbols, weight in corpus:
            for a, b in zip(symbols, symbols[1:]):
                pair_counts[(a, b)] = pair_counts.get((a, b), 0.0) + weight
        if not pair_counts:
            break
        ranked = sorted(pair_counts.items(), key=lambda kv: (-kv[1], kv[0]))
        best, best_count = ranked[0]
        if best_count < 2:
            break
        merges.append(best)
        new_corpus = []
        for symbols, weight in corpus:
            out = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == best:
                    out.append(symbols[i] + symbols[i + 1])
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            new_corpus.append((out, weight))
        corpus = new_corpus
    return merges


class TestBalanceCounts:
    def test_hand_example(self):
        balanced = balance_counts({"en": {"a": 4.0}, "de": {"b": 2.0}})
        assert balanced["de"]["b"] == pytest.approx(4.0)
        assert sum(balanced["en"].values()) == pytest.approx(sum(balanced["de"].values()))

    def test_equal_totals_is_identity(self):
        counts = {"en": {"a": 3.0, "b": 1.0}, "de": {"x": 2.0, "y": 2.0}}
        balanced = balance_counts(counts)
        assert balanced == counts

    def test_scaling_one_language_leaves_result_unchanged(self):
        base = {"en": {"a": 4.0, "b": 2.0}, "de": {"x": 3.0}}
        scaled = {"en": base["en"], "de": {"x": 21.0}}
        a = balance_counts(base)
        b = balance_counts(scaled)
        # both runs equalize to their own max; compare normalized shares
        total_a = {lang: sum(words.values()) for lang, words in a.items()}
        total_b = {lang: sum(words.values()) for lang, words in b.items()}
        assert total_a["en"] == pytest.approx(total_a["de"], rel=1e-6)
        assert total_b["en"] == pytest.approx(total_b["de"], rel=1e-6)
        share_a = a["de"]["x"] / total_a["de"]
        share_b = b["de"]["x"] / total_b["de"]
        assert share_a == pytest.approx(share_b, rel=1e-12)

    def test_totals_equal_within_relative_tolerance(self):
        balanced = balance_counts({"en": {"a": 7.0, "b": 3.0},
                                   "de": {"c": 1.0, "d": 1.0, "e": 1.0},
                                   "fr": {"f": 13.0}})
        totals = [sum(words.values()) for words in balanced.values()]
        top = max(totals)
        assert all(abs(t - top) / top < 1e-6 for t in totals)

    def test_empty_language_rejected(self):
        with pytest.raises(BpeError, match="no words"):
            balance_counts({"en": {"a": 1.0}, "de": {}})

    def test_learning_invariant_to_duplicating_one_language(self):
        """Doubling one language's corpus changes nothing after balancing.

        Holds for the merge sequence at a fixed target as long as pair
        weights stay clear of the stop threshold (scaling moves absolute
        weights but not their order).
        """
        en = {"abab": 10.0, "abc": 6.0}
        de = {"xyxy": 8.0, "xz": 4.0}
        base = learn(merge_counts(balance_counts({"en": en, "de": de})), 6)
        doubled_de = {w: 2 * c for w, c in de.items()}
        doubled = learn(merge_counts(balance_counts({"en": en, "de": doubled_de})), 6)
        assert base.merges == doubled.merges


class TestLearn:
    def test_first_merge_on_aaab(self):
        model = learn({"aaab": 1.0}, target_size=5)
        assert model.merges[0] == ("a", "a")

    def test_zero_target_gives_character_segmentation(self):
        model = learn({"abc": 3.0}, target_size=0)
        assert model.merges == []
        assert apply(model, ["abc"]) == ["a@@", "b@@", "c"]

    def test_negative_target_rejected(self):
        with pytest.raises(BpeError, match=">= 0"):
            learn({"a": 1.0}, target_size=-1)

    def test_stops_when_no_pair_reaches_weight_two(self):
        model = learn({"ab": 1.0, "cd": 1.0}, target_size=10)
        assert model.merges == []

    def test_matches_brute_force_oracle_on_fifty_word_corpus(self):
        words = ["the", "dog", "dogs", "doggy", "cat", "cats", "catnip", "run",
                 "runs", "running", "runner", "jump", "jumps", "jumped", "jumping",
                 "walk", "walks", "walked", "walking", "talk", "talks", "talked",
                 "red", "redder", "reddest", "blue", "bluest", "green", "greens",
                 "quick", "quickly", "slow", "slowly", "e-mail", "e-mails", "x-ray",
                 "one", "once", "only", "on", "in", "inn", "inner", "out", "outer",
                 "up", "upper", "under", "over", "overly"]
        assert len(words) == 50
        counts = {w: float(3 + (i * 7) % 11) for i, w in enumerate(words)}
        mine = learn(counts, target_size=40).merges
        oracle = oracle_learn(counts, target_size=40)
        assert mine == oracle

    def test_deterministic_model_file(self, tmp_path):
        counts = merge_counts(balance_counts(
            {"en": {"aab": 5.0, "abab": 2.0}, "de": {"bba": 3.0}}))
        p1, p2 = tmp_path / "m1.bpe", tmp_path / "m2.bpe"
        learn(counts, 10).save(p1)
        learn(counts, 10).save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_no_learned_merge_touches_a_hyphen(self):
        counts = {"e-mail": 50.0, "x-ray-gun": 30.0, "co-op": 20.0, "-": 10.0}
        model = learn(counts, target_size=30)
        for a, b in model.merges:
            assert "-" not in a and "-" not in b


class TestApply:
    def test_hyphen_word_forced_boundaries(self):
        model = learn({"e-mail": 10.0, "email": 10.0}, target_size=20)
        units = apply(model, ["e-mail"])
        assert detokenize(units) == ["e-mail"]
        for unit in units:
            bare = unit.removesuffix(model.marker)
            assert bare == "-" or "-" not in bare

    def test_frequent_word_becomes_single_unit(self):
        model = learn({"hello": 100.0}, target_size=10)
        assert apply(model, ["hello"]) == ["hello"]

    def test_special_tokens_pass_through(self):
        model = learn({"abc": 5.0}, target_size=3)
        out = apply(model, ["<TO_DE>", "abc", "<SEP>"])
        assert out[0] == "<TO_DE>" and out[-1] == "<SEP>"

    def test_roundtrip_exact(self):
        model = learn({"banana": 4.0, "band": 3.0, "e-mail": 2.0}, target_size=8)
        tokens = ["banana", "band", "e-mail", "<DOM_CAP>", "bananaband", "-"]
        assert detokenize(apply(model, tokens)) == tokens


class TestDetokenize:
    def test_empty_input(self):
        assert detokenize([]) == []

    def test_specials_verbatim(self):
        assert detokenize(["<TO_FR>", "a@@", "b"]) == ["<TO_FR>", "ab"]

    def test_dangling_marker_rejected(self):
        with pytest.raises(BpeError, match="dangling|trailing"):
            detokenize(["a@@"])
        with pytest.raises(BpeError, match="dangling"):
            detokenize(["a@@", "<SEP>"])

    def test_lenient_mode_flushes_fragment(self):
        assert detokenize(["a@@"], strict=False) == ["a"]
        assert detokenize(["a@@", "<SEP>", "b"], strict=False) == ["a", "<SEP>", "b"]

    @given(TOKEN_LINES)
    @settings(deadline=None, max_examples=300)
    def test_roundtrip_property(self, tokens):
        model = learn({"abcd": 9.0, "cde-f": 7.0, "ff": 4.0}, target_size=6)
        assert detokenize(apply(model, tokens)) == tokens


class TestModelFile:
    def test_save_load_roundtrip(self, tmp_path):
        model = learn({"aabab": 6.0, "e-mail": 3.0}, target_size=6)
        path = tmp_path / "toy.bpe"
        model.save(path)
        loaded = BpeModel.load(path)
        assert loaded.merges == model.merges
        assert loaded.marker == model.marker
        assert loaded.target_size == model.target_size

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "junk.bpe"
        path.write_text("not a model\n")
        with pytest.raises(BpeError, match="not a subword model"):
            BpeModel.load(path)

    def test_duplicate_merges_rejected(self):
        with pytest.raises(BpeError, match="duplicate"):
            BpeModel(merges=[("a", "b"), ("a", "b")])


class TestHelpers:
    def test_hyphen_segments(self):
        assert hyphen_segments("e-mail") == ["e", "-", "mail"]
        assert hyphen_segments("a--b") == ["a", "-", "-", "b"]
        assert hyphen_segments("-") == ["-"]
        assert hyphen_segments("plain") == ["plain"]

    def test_word_counts_skips_specials(self):
        counts = word_counts([["<TO_DE>", "a", "a"], ["b"]])
        assert counts == {"a": 2.0, "b": 1.0}
