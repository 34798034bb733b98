"""Base recipe: preprocess -> tag -> BPE -> train -> beam decode -> score.

A 32-pair toy corpus is memorized by a 2-layer model in a few hundred
steps, then decoded with beam search and scored with BLEU/chrF.
Run:  python demos/04_train_and_translate.py     (about a minute on CPU)
"""

import numpy as np

import toy_setup
from tinymmt import bpe, training
from tinymmt.decoding import translate_corpus
from tinymmt.metrics import corpus_bleu, corpus_chrf

bpe_model, vocab, src, tgt, _, refs = toy_setup.build()
print(f"corpus: {len(src)} pairs, vocabulary {len(vocab)} subwords")
print("sample source:", " ".join(src[0]))
print("sample target:", " ".join(tgt[0]))

config = toy_setup.config("none")
train_samples = toy_setup.samples(src, tgt, vocab)
print("\ntraining 400 steps (warmup 400, lr = 2 * d_model^-0.5 * schedule)...")
result = training.train(train_samples, config, seed=11, steps=400, vocab=vocab,
                        warmup_steps=400, log_every=100)
for record in result.history:
    print(f"  step {record['step']:4d}  loss {record['loss']:.4f}  lr {record['lr']:.5f}")

accuracy = training.token_accuracy(result.model, train_samples)
print(f"\nteacher-forced token accuracy: {accuracy:.3f}")

print("\nbeam decoding (width 5, length normalization alpha 0.6)...")
outputs = translate_corpus(result.model, [s.src_ids for s in train_samples], width=5)
hyps = [" ".join(bpe.detokenize(vocab.decode(ids), strict=False)) for ids in outputs]
for i in (0, 7, 19):
    print(f"  src: {' '.join(src[i])}")
    print(f"  hyp: {hyps[i]}")
    print(f"  ref: {refs[i]}\n")

print(f"training BLEU  = {corpus_bleu(hyps, refs):.2f}")
print(f"training chrF1 = {corpus_chrf(hyps, refs, beta=1.0):.2f}")
