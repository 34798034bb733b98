"""Bidirectional token/id vocabulary with reserved special tokens."""

from __future__ import annotations

from collections import Counter
from collections.abc import Iterable

PAD = "<PAD>"
UNK = "<UNK>"
BOS = "<BOS>"
EOS = "<EOS>"
SEP = "<SEP>"

LANGUAGE_TAGS = {"de": "<TO_DE>", "fr": "<TO_FR>"}
DOMAIN_LABELS = {"caption": "<DOM_CAP>", "synthetic": "<DOM_SYN>", "subtitles": "<DOM_SUB>"}

# Fixed order; ids of specials are stable across all vocabularies.
SPECIAL_TOKENS = (PAD, UNK, BOS, EOS, SEP,
                  LANGUAGE_TAGS["de"], LANGUAGE_TAGS["fr"],
                  DOMAIN_LABELS["caption"], DOMAIN_LABELS["synthetic"], DOMAIN_LABELS["subtitles"])


class Vocabulary:
    """Token <-> id map; specials occupy the lowest ids in a fixed order."""

    def __init__(self, tokens: Iterable[str]):
        self.tokens = list(tokens)
        if tuple(self.tokens[:len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the reserved special tokens")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate tokens")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token: str):
        return token in self.index

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    @property
    def bos_id(self) -> int:
        return self.index[BOS]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    def id(self, token: str) -> int:
        return self.index.get(token, self.index[UNK])

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def decode(self, ids: Iterable[int], strip_special: bool = True) -> list[str]:
        out = []
        for i in ids:
            tok = self.tokens[i]
            if strip_special and tok in (PAD, BOS, EOS):
                continue
            out.append(tok)
        return out

    @classmethod
    def build(cls, lines: Iterable[Iterable[str]]) -> "Vocabulary":
        """Frequency-sorted vocabulary from tokenized lines; ties break lexicographically."""
        counts = Counter()
        for line in lines:
            counts.update(line)
        body = sorted((t for t in counts if t not in SPECIAL_TOKENS),
                      key=lambda t: (-counts[t], t))
        return cls(list(SPECIAL_TOKENS) + body)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for tok in self.tokens:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            return cls([line.rstrip("\n") for line in f])


def language_tag(lang: str) -> str:
    if lang not in LANGUAGE_TAGS:
        raise ValueError(f"unknown target language '{lang}' (expected one of {sorted(LANGUAGE_TAGS)})")
    return LANGUAGE_TAGS[lang]


def domain_label(domain: str) -> str:
    if domain not in DOMAIN_LABELS:
        raise ValueError(f"unknown domain '{domain}' (expected one of {sorted(DOMAIN_LABELS)})")
    return DOMAIN_LABELS[domain]
