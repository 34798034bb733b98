"""Shared toy translation task for the training demos (importable helper)."""

import numpy as np

from tinymmt import bpe, corpus, training
from tinymmt.config import ModelConfig
from tinymmt.vocab import Vocabulary

ADJ = [("red", "rot"), ("big", "gross"), ("old", "alt"), ("small", "klein")]
NOUN = [("dog", "hund"), ("cat", "katze"), ("man", "mann"), ("woman", "frau")]
VERB = [("runs", "rennt"), ("jumps", "springt"), ("sleeps", "schlaeft"), ("eats", "isst")]
ADV = [("quickly", "schnell"), ("slowly", "langsam"), ("today", "heute"),
       ("outside", "draussen")]


def pair(i):
    a, n, v, d = ADJ[i % 4], NOUN[(i // 4) % 4], VERB[(i // 16) % 4], ADV[(i // 64) % 4]
    return (f"the {a[0]} {n[0]} {v[0]} {d[0]} .",
            f"der {a[1]} {n[1]} {v[1]} {d[1]} .")


def feature(i):
    vec = np.zeros(8)
    vec[i % 4] = 1.0
    vec[4 + (i // 4) % 4] = 1.0
    return vec


def build(n_train=32):
    pairs = [pair(i) for i in range(n_train)]
    src_tok = [corpus.tag(corpus.preprocess(s), "de", "caption") for s, _ in pairs]
    tgt_tok = [corpus.preprocess(t) for _, t in pairs]
    counts = bpe.balance_counts({
        "en": bpe.word_counts([corpus.preprocess(s) for s, _ in pairs]),
        "de": bpe.word_counts(tgt_tok)})
    model = bpe.learn(bpe.merge_counts(counts), 60)
    src = [bpe.apply(model, line) for line in src_tok]
    tgt = [bpe.apply(model, line) for line in tgt_tok]
    vocab = Vocabulary.build(src + tgt)
    feats = [feature(i) for i in range(n_train)]
    refs = [" ".join(t) for t in tgt_tok]
    return model, vocab, src, tgt, feats, refs


def config(fusion="none", **overrides):
    base = dict(n_layers=2, d_model=64, n_heads=4, d_ff=128, dropout=0.1,
                label_smoothing=0.1, batch_tokens=512, visual_dim=8,
                fusion=fusion, max_len=64)
    base.update(overrides)
    return ModelConfig(**base)


def samples(src, tgt, vocab, feats=None):
    return training.make_samples(src, tgt, vocab, feats)
