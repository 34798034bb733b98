"""Text preprocessing, tagging, and the two corpus quality filters.

The cleaning pipeline lowercases, repairs double-encoded entities,
normalizes punctuation, and rule-tokenizes (documented regex below).
Two filters assign every sentence pair a quality score so the best k
pairs can be kept:

* the punctuation-balance heuristic penalizes mismatched or repeated
  terminal punctuation between the two sides;
* the character-LM filter runs length/ratio, noise, charset and
  duplicate stages, then scores survivors by mean per-character
  log-probability of the target under an in-domain n-gram model.
"""

from __future__ import annotations

import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field

from . import vocab as V

TERMINAL_PUNCTUATION = frozenset({".", "...", "?", "!"})

# entity repairs, applied after un-double-encoding &amp; -> &
_ENTITIES = {
    "&quot;": '"', "&apos;": "'", "&#39;": "'", "&#34;": '"',
    "&lt;": "<", "&gt;": ">", "&nbsp;": " ", "&amp;": "&",
}

_PUNCT_NORMALIZE = {
    "…": "...",                      # horizontal ellipsis
    "‘": "'", "’": "'", "‚": "'", "′": "'",
    "“": '"', "”": '"', "„": '"',
    "–": "-", "—": "-", "−": "-",
    " ": " ", "´": "'", "`": "'",
}

# words keep internal hyphens/apostrophes; "..." is one token; any other
# non-word character is a token on its own
_TOKEN_RE = re.compile(r"\.\.\.|\w+(?:[-']\w+)*|[^\w\s]", re.UNICODE)


class CorpusError(ValueError):
    pass


@dataclass
class RawPair:
    source: str
    target: str
    origin: str = "multi30k"            # multi30k | mscoco_synthetic | subtitles
    pair_id: int = 0


@dataclass
class ScoredPair:
    pair: RawPair
    score: float


def fix_entities(text: str) -> str:
    # collapse double (or deeper) encodings first: &amp;amp; -> &amp; -> &
    while "&amp;" in text:
        text = text.replace("&amp;", "&")
    for entity, char in _ENTITIES.items():
        if entity == "&amp;":
            continue
        text = text.replace(entity, char)
    return text


def normalize_punctuation(text: str) -> str:
    for src, dst in _PUNCT_NORMALIZE.items():
        text = text.replace(src, dst)
    return text


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def preprocess(line: str) -> list[str]:
    """Entity fix, punctuation normalization, lowercasing, rule tokenization.

    Whitespace-delimited special tokens (tags, separator) pass through
    verbatim, so preprocessing is idempotent on already-tagged text.
    """
    out: list[str] = []
    for chunk in line.split():
        if chunk in V.SPECIAL_TOKENS:
            out.append(chunk)
        else:
            out.extend(tokenize(normalize_punctuation(fix_entities(chunk)).lower()))
    return out


def read_lines(path) -> list[str]:
    """UTF-8 lines; a bad byte sequence reports its 1-based line number."""
    with open(path, "rb") as f:
        raw = f.read()
    lines = raw.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    decoded = []
    for i, line in enumerate(lines, start=1):
        try:
            decoded.append(line.decode("utf-8").rstrip("\r"))
        except UnicodeDecodeError as err:
            raise CorpusError(f"{path}: line {i}: invalid UTF-8 ({err.reason})") from None
    return decoded


def read_parallel(src_path, tgt_path, origin: str = "multi30k") -> tuple[list[RawPair], int]:
    """Line-aligned pair list; returns (pairs, count of dropped empty pairs).

    Pair ids are source line numbers (0-based), so they stay stable across
    the drop.
    """
    src_lines = read_lines(src_path)
    tgt_lines = read_lines(tgt_path)
    if len(src_lines) != len(tgt_lines):
        raise CorpusError(f"parallel corpus length mismatch: {src_path} has {len(src_lines)} "
                          f"lines, {tgt_path} has {len(tgt_lines)}")
    pairs, dropped = [], 0
    for i, (s, t) in enumerate(zip(src_lines, tgt_lines)):
        if not s.strip() or not t.strip():
            dropped += 1
            continue
        pairs.append(RawPair(source=s, target=t, origin=origin, pair_id=i))
    return pairs, dropped


# -- punctuation-balance heuristic ----------------------------------------

def punct_balance_score(src_tokens: list[str], tgt_tokens: list[str]) -> float:
    """Quality score from terminal punctuation counts (never positive).

    With c = count of tokens that are exactly '.', '...', '?' or '!':
    score = -|c_src - c_tgt| - max(0, c_src - 1) - max(0, c_tgt - 1).
    Zero iff the two counts are equal and each is at most one.
    """
    c_src = sum(1 for t in src_tokens if t in TERMINAL_PUNCTUATION)
    c_tgt = sum(1 for t in tgt_tokens if t in TERMINAL_PUNCTUATION)
    return float(-abs(c_src - c_tgt) - max(0, c_src - 1) - max(0, c_tgt - 1))


# -- character n-gram language model ---------------------------------------

class CharNgramLM:
    """Add-k smoothed character n-gram model over whole sentence strings.

    Contexts are padded with a start symbol; every character outside the
    training alphabet maps to a single unknown symbol, so each context's
    distribution sums to exactly one over the (alphabet + unknown) set.
    """

    BOS = "\x02"
    UNK = "\x00"

    def __init__(self, order: int = 6, smoothing: float = 0.01):
        if order < 1:
            raise ValueError(f"order must be >= 1, got {order}")
        if smoothing <= 0:
            raise ValueError(f"smoothing constant must be positive, got {smoothing}")
        self.order = order
        self.smoothing = smoothing
        self.alphabet: tuple[str, ...] = ()
        self._members: frozenset = frozenset()
        self._counts: dict[str, Counter] = {}
        self._totals: dict[str, float] = {}

    def fit(self, texts) -> "CharNgramLM":
        chars = set()
        for text in texts:
            chars.update(text)
        self.alphabet = tuple(sorted(chars)) + (self.UNK,)
        self._members = frozenset(chars)
        self._counts = {}
        self._totals = {}
        for text in texts:
            padded = self._pad(text)
            for i in range(self.order - 1, len(padded)):
                context = padded[i - self.order + 1:i]
                counts = self._counts.get(context)
                if counts is None:
                    counts = self._counts[context] = Counter()
                counts[padded[i]] += 1
        for context, counts in self._counts.items():
            self._totals[context] = float(sum(counts.values()))
        return self

    def _pad(self, text: str) -> str:
        mapped = "".join(c if c in self._members else self.UNK for c in text)
        return self.BOS * (self.order - 1) + mapped

    def char_logprob(self, char: str, context: str) -> float:
        """log P(char | context); context is the preceding order-1 symbols."""
        char = char if char in self._members else self.UNK
        context = "".join(c if c in self._members or c == self.BOS else self.UNK
                          for c in context)
        if self.order > 1:
            context = (self.BOS * (self.order - 1) + context)[-(self.order - 1):]
        else:
            context = ""
        counts = self._counts.get(context)
        count = counts[char] if counts else 0
        total = self._totals.get(context, 0.0)
        k = self.smoothing
        return math.log((count + k) / (total + k * len(self.alphabet)))

    def context_distribution(self, context: str) -> list[float]:
        """P(char | context) over the full alphabet; sums to one."""
        return [math.exp(self.char_logprob(c, context)) for c in self.alphabet]

    def score(self, text: str) -> float:
        """Mean per-character log-probability; empty text scores 0."""
        if not text:
            return 0.0
        padded = self._pad(text)
        k = self.smoothing
        denom_base = k * len(self.alphabet)
        total = 0.0
        for i in range(self.order - 1, len(padded)):
            context = padded[i - self.order + 1:i]
            counts = self._counts.get(context)
            count = counts[padded[i]] if counts else 0
            total += math.log((count + k) / (self._totals.get(context, 0.0) + denom_base))
        return total / len(text)


# -- LM-based filter ---------------------------------------------------------

def build_char_whitelist(texts) -> frozenset:
    chars = set()
    for text in texts:
        chars.update(text)
    return frozenset(chars)


def is_noisy(text: str, max_symbol_fraction: float = 0.5) -> bool:
    """Rule filter: control characters, or mostly non-alphabetic content."""
    visible = [c for c in text if not c.isspace()]
    if any(unicodedata.category(c) == "Cc" for c in text):
        return True
    if not visible:
        return True
    non_alpha = sum(1 for c in visible if not c.isalpha())
    return non_alpha / len(visible) > max_symbol_fraction


@dataclass
class FilterReport:
    input_pairs: int = 0
    dropped: dict = field(default_factory=dict)   # stage name -> count
    survivors: int = 0

    def render(self) -> str:
        lines = [f"input pairs\t{self.input_pairs}"]
        for stage, count in self.dropped.items():
            lines.append(f"dropped by {stage}\t{count}")
        lines.append(f"survivors\t{self.survivors}")
        return "\n".join(lines) + "\n"


def _content_text(text: str) -> str:
    """Text with structural special tokens (tags, separator) removed.

    The noise and charset stages judge corpus content; tag tokens are
    machine-added structure and would otherwise always fail a whitelist
    built from plain in-domain text.
    """
    return " ".join(t for t in text.split() if t not in V.SPECIAL_TOKENS)


def charlm_filter(pairs: list[RawPair], lm: CharNgramLM, whitelist: frozenset,
                  max_len: int = 100, max_ratio: float = 2.0,
                  max_symbol_fraction: float = 0.5) -> tuple[list[ScoredPair], FilterReport]:
    """Stage pipeline (length/ratio, noise rules, charset, dedup) then LM scoring.

    ``pairs`` must hold preprocessed text (the dedup key is the exact
    source/target string pair). Survivors get the mean per-character
    log-probability of their target side. Idempotent: re-running on its
    own output drops nothing.
    """
    report = FilterReport(input_pairs=len(pairs))

    kept = []
    for p in pairs:
        n_src, n_tgt = len(p.source.split()), len(p.target.split())
        if n_src > max_len or n_tgt > max_len:
            continue
        if max(n_src, n_tgt) / max(1, min(n_src, n_tgt)) > max_ratio:
            continue
        kept.append(p)
    report.dropped["length/ratio"] = len(pairs) - len(kept)
    pairs = kept

    kept = [p for p in pairs
            if not is_noisy(_content_text(p.source), max_symbol_fraction)
            and not is_noisy(_content_text(p.target), max_symbol_fraction)]
    report.dropped["noise rules"] = len(pairs) - len(kept)
    pairs = kept

    kept = [p for p in pairs
            if set(_content_text(p.source)) <= whitelist
            and set(_content_text(p.target)) <= whitelist]
    report.dropped["charset"] = len(pairs) - len(kept)
    pairs = kept

    seen = set()
    kept = []
    for p in pairs:
        key = (p.source, p.target)
        if key in seen:
            continue
        seen.add(key)
        kept.append(p)
    report.dropped["duplicate"] = len(pairs) - len(kept)
    pairs = kept

    if not pairs:
        raise CorpusError("charlm_filter: no pairs survive the filter stages")
    report.survivors = len(pairs)
    return [ScoredPair(pair=p, score=lm.score(p.target)) for p in pairs], report


def select_top_k(scored: list[ScoredPair], k: int) -> list[RawPair]:
    """The k best pairs by (score descending, pair id ascending)."""
    if k <= 0:
        raise ValueError(f"select_top_k: k must be positive, got {k}")
    if k > len(scored):
        raise ValueError(f"select_top_k: k={k} exceeds {len(scored)} scored pairs")
    ranked = sorted(scored, key=lambda sp: (-sp.score, sp.pair.pair_id))
    return [sp.pair for sp in ranked[:k]]


# -- tagging and caption concatenation ----------------------------------------

def tag(src_tokens: list[str], target_lang: str, domain: str) -> list[str]:
    """Prefix the source with its target-language tag and domain label."""
    return [V.language_tag(target_lang), V.domain_label(domain)] + list(src_tokens)


def concat_captions(src_tokens: list[str], captions: list[list[str]]) -> list[str]:
    """Append up to five automatic captions, each preceded by the separator token."""
    if len(captions) > 5:
        raise CorpusError(f"concat_captions: at most 5 captions supported, got {len(captions)}")
    out = list(src_tokens)
    for caption in captions:
        out.append(V.SEP)
        out.extend(caption)
    return out
