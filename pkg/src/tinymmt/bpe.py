"""Shared byte-pair-encoding subwords with balanced multilingual counts.

Learning greedily merges the most frequent adjacent symbol pair until the
requested number of merges is reached or no pair occurs with weight >= 2;
ties break to the lexicographically smallest pair, so the model is fully
deterministic. Per-language word counts can first be rescaled so every
language contributes the same total weight.

Words are pre-split around hyphens (each hyphen its own segment) before
any merging, both at learn and at apply time, so no merge ever crosses a
hyphen. Subword units carry a continuation suffix ("@@" by default) on
every non-final unit of a token; merges operate on plain character
sequences with no end-of-word symbol.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .vocab import SPECIAL_TOKENS

CONTINUATION_MARKER = "@@"
FILE_HEADER = "tinymmt-bpe v1"

_HYPHEN_SPLIT = re.compile(r"(-)")


class BpeError(ValueError):
    pass


@dataclass
class BpeModel:
    merges: list[tuple[str, str]] = field(default_factory=list)
    target_size: int = 0
    marker: str = CONTINUATION_MARKER

    def __post_init__(self):
        if len(set(self.merges)) != len(self.merges):
            raise BpeError("duplicate merge in model")
        self.ranks = {pair: i for i, pair in enumerate(self.merges)}

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(FILE_HEADER + "\n")
            f.write(f"marker {self.marker}\n")
            f.write(f"target_size {self.target_size}\n")
            for a, b in self.merges:
                f.write(f"{a} {b}\n")

    @classmethod
    def load(cls, path) -> "BpeModel":
        with open(path, encoding="utf-8") as f:
            lines = [line.rstrip("\n") for line in f]
        if not lines or lines[0] != FILE_HEADER:
            raise BpeError(f"{path}: not a subword model file")
        marker = lines[1].split(" ", 1)[1]
        target_size = int(lines[2].split(" ", 1)[1])
        merges = []
        for line in lines[3:]:
            if not line:
                continue
            a, b = line.split(" ")
            merges.append((a, b))
        return cls(merges=merges, target_size=target_size, marker=marker)


def balance_counts(per_lang_counts: dict[str, dict[str, float]]) -> dict[str, dict[str, float]]:
    """Rescale each language's word counts so all languages sum to the same total.

    The common total is the largest language's, so the factor is
    max_total / lang_total >= 1. Weights come back real-valued.
    """
    totals = {}
    for lang, counts in per_lang_counts.items():
        total = float(sum(counts.values()))
        if total <= 0:
            raise BpeError(f"balance_counts: language '{lang}' has no words")
        totals[lang] = total
    top = max(totals.values())
    return {lang: {word: count * (top / totals[lang]) for word, count in counts.items()}
            for lang, counts in per_lang_counts.items()}


def merge_counts(per_lang_counts: dict[str, dict[str, float]]) -> dict[str, float]:
    combined: dict[str, float] = {}
    for lang in sorted(per_lang_counts):
        for word, weight in per_lang_counts[lang].items():
            combined[word] = combined.get(word, 0.0) + weight
    return combined


def hyphen_segments(word: str) -> list[str]:
    """Split a word at hyphens, keeping each hyphen as its own segment."""
    return [seg for seg in _HYPHEN_SPLIT.split(word) if seg]


def learn(word_counts: dict[str, float], target_size: int) -> BpeModel:
    """Learn up to ``target_size`` merges from weighted word counts.

    Pair statistics are maintained incrementally. Stops early when the
    best pair's weight drops below 2.
    """
    if target_size < 0:
        raise BpeError(f"learn: target_size must be >= 0, got {target_size}")
    # exploded corpus: one entry per distinct hyphen-free segment
    segment_weight: dict[tuple[str, ...], float] = {}
    for word in sorted(word_counts):
        weight = float(word_counts[word])
        for segment in hyphen_segments(word):
            key = tuple(segment)
            segment_weight[key] = segment_weight.get(key, 0.0) + weight
    segments = [list(symbols) for symbols in segment_weight]
    weights = list(segment_weight.values())

    pair_weight: dict[tuple[str, str], float] = {}
    pair_sites: dict[tuple[str, str], set[int]] = {}
    def count_pairs(index):
        symbols = segments[index]
        w = weights[index]
        for a, b in zip(symbols, symbols[1:]):
            pair = (a, b)
            pair_weight[pair] = pair_weight.get(pair, 0.0) + w
            pair_sites.setdefault(pair, set()).add(index)
    for index in range(len(segments)):
        count_pairs(index)

    merges: list[tuple[str, str]] = []
    while len(merges) < target_size and pair_weight:
        best = min(pair_weight, key=lambda p: (-pair_weight[p], p))
        if pair_weight[best] < 2.0:
            break
        merges.append(best)
        joined = best[0] + best[1]
        for index in sorted(pair_sites[best]):
            symbols = segments[index]
            w = weights[index]
            # retract this segment's pair statistics, rewrite, re-add
            for a, b in zip(symbols, symbols[1:]):
                pair = (a, b)
                pair_weight[pair] -= w
                if pair_weight[pair] <= 0.0:
                    del pair_weight[pair]
                    del pair_sites[pair]
                else:
                    pair_sites[pair].discard(index)
            rewritten = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == best[0] and symbols[i + 1] == best[1]:
                    rewritten.append(joined)
                    i += 2
                else:
                    rewritten.append(symbols[i])
                    i += 1
            segments[index] = rewritten
            count_pairs(index)
    return BpeModel(merges=merges, target_size=target_size)


def _encode_word(model: BpeModel, word: str) -> list[str]:
    units: list[str] = []
    for segment in hyphen_segments(word):
        symbols = list(segment)
        while len(symbols) > 1:
            ranked = [(model.ranks[pair], i)
                      for i, pair in enumerate(zip(symbols, symbols[1:]))
                      if pair in model.ranks]
            if not ranked:
                break
            rank, _ = min(ranked)
            a, b = model.merges[rank]
            rewritten = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
                    rewritten.append(a + b)
                    i += 2
                else:
                    rewritten.append(symbols[i])
                    i += 1
            symbols = rewritten
        units.extend(symbols)
    return units


def apply(model: BpeModel, tokens: list[str],
          passthrough: frozenset = frozenset(SPECIAL_TOKENS)) -> list[str]:
    """Segment tokens into subword units with continuation markers.

    Special tokens pass through untouched. Within a token, every unit but
    the last carries the continuation marker, so ``detokenize`` can
    reassemble the exact token sequence.
    """
    out: list[str] = []
    for token in tokens:
        if not token:
            continue
        if token in passthrough:
            out.append(token)
            continue
        units = _encode_word(model, token)
        for unit in units[:-1]:
            out.append(unit + model.marker)
        out.append(units[-1])
    return out


def detokenize(subwords: list[str], marker: str = CONTINUATION_MARKER,
               passthrough: frozenset = frozenset(SPECIAL_TOKENS),
               strict: bool = True) -> list[str]:
    """Exact inverse of ``apply`` on its own output.

    A dangling continuation marker is an error under ``strict``; with
    strict=False (used on raw model output, which can stop mid-token) the
    open fragment is flushed as a token instead.
    """
    tokens: list[str] = []
    buffer = ""
    def flush_dangling(context):
        nonlocal buffer
        if strict:
            raise BpeError(f"detokenize: continuation marker dangling {context}")
        tokens.append(buffer)
        buffer = ""
    for unit in subwords:
        if unit in passthrough:
            if buffer:
                flush_dangling(f"before '{unit}'")
            tokens.append(unit)
        elif unit.endswith(marker) and len(unit) > len(marker):
            buffer += unit[:-len(marker)]
        else:
            tokens.append(buffer + unit)
            buffer = ""
    if buffer:
        flush_dangling("at end of sequence")
    return tokens


def word_counts(lines: list[list[str]],
                skip: frozenset = frozenset(SPECIAL_TOKENS)) -> dict[str, float]:
    """Word frequency map from tokenized lines, excluding special tokens."""
    counts: dict[str, float] = {}
    for line in lines:
        for token in line:
            if token in skip:
                continue
            counts[token] = counts.get(token, 0.0) + 1.0
    return counts
