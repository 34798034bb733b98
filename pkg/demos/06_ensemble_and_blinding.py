"""Ensemble-of-3 decoding and the blinding ablation.

Three models trained with different seeds are combined by averaging the
posterior distributions after the softmax. The blinding ablation then
replaces every sentence's visual feature with the training-set mean and
counts how many translations change.
Run:  python demos/06_ensemble_and_blinding.py     (a few minutes on CPU)
"""

import numpy as np

import toy_setup
from tinymmt import bpe, training
from tinymmt.decoding import ensemble_step, translate_corpus
from tinymmt.fusion import blind, mean_feature
from tinymmt.metrics import corpus_bleu

bpe_model, vocab, src, tgt, feats, refs = toy_setup.build()
config = toy_setup.config("img_w")


def decode(models, visuals):
    ids = [vocab.encode(line) for line in src]
    outputs = translate_corpus(models, ids, visuals, width=5)
    return [" ".join(bpe.detokenize(vocab.decode(o), strict=False)) for o in outputs]


print("== training an ensemble of 3 (independent seeds) ==")
members = []
for seed in (101, 102, 103):
    samples = toy_setup.samples(src, tgt, vocab, feats)
    run = training.train(samples, config, seed=seed, steps=250, vocab=vocab,
                         warmup_steps=400)
    members.append(run.model)
    print(f"  seed {seed}: final loss {run.history[-1]['loss']:.3f}")

print("\n== posterior averaging after the softmax ==")
encs = [m.encode_array(vocab.encode(src[0]), feats[0]) for m in members]
averaged = ensemble_step(members, [vocab.bos_id], encs)
print(f"  averaged next-token distribution sums to {averaged.sum():.12f}")

single_texts = decode(members[:1], feats)
ensemble_texts = decode(members, feats)
print(f"  single-model BLEU:   {corpus_bleu(single_texts, refs):6.2f}")
print(f"  ensemble-of-3 BLEU:  {corpus_bleu(ensemble_texts, refs):6.2f}")

print("\n== blinding: mean feature instead of the real one ==")
mean = mean_feature(feats)
provider = blind(mean)
blind_feats = [provider[i] for i in range(len(src))]
blinded_texts = decode(members, blind_feats)
diffs = sum(a != b for a, b in zip(ensemble_texts, blinded_texts))
print(f"  translations changed by blinding: {diffs}/{len(src)}")
print(f"  blinded ensemble BLEU: {corpus_bleu(blinded_texts, refs):6.2f}")
for a, b in zip(ensemble_texts, blinded_texts):
    if a != b:
        print(f"  with image:  {a}")
        print(f"  blinded:     {b}")
        break
else:
    print("  (no sentence changed: the text already determines every output,")
    print("   so the models learned to ignore the image on this corpus)")
