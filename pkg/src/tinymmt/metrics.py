"""Corpus-level BLEU and chrF translation metrics.

BLEU is the uncased corpus statistic over tokenized text: geometric mean
of modified (clipped) 1..4-gram precisions times the brevity penalty
exp(min(0, 1 - ref_len/hyp_len)). It is unsmoothed by default, so a
corpus without any 4-gram match scores 0; a small add-one smoothing
variant exists for tiny test corpora.

chrF is the F-score over character n-grams of orders 1..6 computed on
whitespace-stripped text (n-grams cross word boundaries). Precision and
recall are micro-averaged over the corpus per order, then macro-averaged
over the orders where n-grams exist on both sides.
"""

from __future__ import annotations

import math
import re
from collections import Counter

BLEU_ORDER = 4
CHRF_ORDER = 6

_WHITESPACE = re.compile(r"\s+")


class MetricError(ValueError):
    pass


def _check_corpus(hypotheses, references):
    if len(hypotheses) != len(references):
        raise MetricError(f"hypothesis/reference line counts differ: "
                          f"{len(hypotheses)} vs {len(references)}")
    if not hypotheses:
        raise MetricError("empty corpus")


def _ngram_counts(tokens: list[str], order: int) -> Counter:
    return Counter(tuple(tokens[i:i + order]) for i in range(len(tokens) - order + 1))


def corpus_bleu(hypotheses: list[str], references: list[str], smooth: bool = False) -> float:
    """Uncased corpus BLEU in percent; single reference per hypothesis."""
    _check_corpus(hypotheses, references)
    matches = [0] * BLEU_ORDER
    totals = [0] * BLEU_ORDER
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_tokens = hyp.lower().split()
        ref_tokens = ref.lower().split()
        hyp_len += len(hyp_tokens)
        ref_len += len(ref_tokens)
        for n in range(1, BLEU_ORDER + 1):
            hyp_counts = _ngram_counts(hyp_tokens, n)
            ref_counts = _ngram_counts(ref_tokens, n)
            totals[n - 1] += sum(hyp_counts.values())
            matches[n - 1] += sum((hyp_counts & ref_counts).values())
    if hyp_len == 0:
        return 0.0
    log_sum = 0.0
    effective = 0
    for n in range(BLEU_ORDER):
        m, t = matches[n], totals[n]
        if t == 0:
            # the hypothesis corpus has no n-grams of this order at all
            # (only possible when every sentence is shorter than n); skip
            # the order so that identity corpora of short lines score 100
            continue
        if smooth:
            m, t = m + 1, t + 1
        if m == 0:
            return 0.0
        log_sum += math.log(m / t)
        effective += 1
    if effective == 0:
        return 0.0
    brevity = math.exp(min(0.0, 1.0 - ref_len / hyp_len))
    return 100.0 * brevity * math.exp(log_sum / effective)


def _char_ngrams(text: str, order: int) -> Counter:
    return Counter(text[i:i + order] for i in range(len(text) - order + 1))


def corpus_chrf(hypotheses: list[str], references: list[str], beta: float = 1.0,
                max_order: int = CHRF_ORDER) -> float:
    """Character n-gram F_beta in percent; whitespace is stripped first."""
    if beta <= 0:
        raise MetricError(f"chrf: beta must be positive, got {beta}")
    _check_corpus(hypotheses, references)
    hyp_totals = [0] * max_order
    ref_totals = [0] * max_order
    matched = [0] * max_order
    for hyp, ref in zip(hypotheses, references):
        hyp_text = _WHITESPACE.sub("", hyp.lower())
        ref_text = _WHITESPACE.sub("", ref.lower())
        for n in range(1, max_order + 1):
            hyp_counts = _char_ngrams(hyp_text, n)
            ref_counts = _char_ngrams(ref_text, n)
            hyp_totals[n - 1] += sum(hyp_counts.values())
            ref_totals[n - 1] += sum(ref_counts.values())
            matched[n - 1] += sum((hyp_counts & ref_counts).values())
    precision_sum = recall_sum = 0.0
    effective = 0
    for n in range(max_order):
        if hyp_totals[n] > 0 and ref_totals[n] > 0:
            precision_sum += matched[n] / hyp_totals[n]
            recall_sum += matched[n] / ref_totals[n]
            effective += 1
    if effective == 0:
        return 0.0
    precision = precision_sum / effective
    recall = recall_sum / effective
    if precision + recall == 0.0:
        return 0.0
    b2 = beta * beta
    return 100.0 * (1 + b2) * precision * recall / (b2 * precision + recall)
