"""Visual fusion recipes: pseudo-word, gates, trg-mul, and gate finetuning.

Trains each fusion variant briefly on the multimodal toy corpus, then
demonstrates the freeze-and-finetune recipe: attach a decoder gate to a
trained text-only model, freeze the main network, train only the gate.
Run:  python demos/05_fusion_modes.py     (a few minutes on CPU)
"""

import numpy as np

import toy_setup
from tinymmt import training
from tinymmt.decoding import translate_corpus
from tinymmt.model import Transformer

bpe_model, vocab, src, tgt, feats, refs = toy_setup.build()

print("== a short training run per fusion mode ==")
for mode in ("img_w", "enc_gate", "dec_gate", "enc_dec_gate", "trg_mul"):
    config = toy_setup.config(mode)
    samples = toy_setup.samples(src, tgt, vocab, feats)
    result = training.train(samples, config, seed=7, steps=150, vocab=vocab,
                            warmup_steps=400, log_every=150)
    accuracy = training.token_accuracy(result.model, samples)
    print(f"  {mode:12s} 150 steps: loss {result.history[-1]['loss']:.3f}, "
          f"token accuracy {accuracy:.2f}")

print("\n== gate bias starts positive: the gate is open at initialization ==")
gated = Transformer(toy_setup.config("dec_gate"), vocab, seed=1)
print("  dec-gate bias init:", gated.params["fusion.dec_gate.bias"].data[0])

print("\n== freeze-and-finetune: attach a dec-gate to a text-only model ==")
text_config = toy_setup.config("none")
text_samples = toy_setup.samples(src, tgt, vocab)
base = training.train(text_samples, text_config, seed=11, steps=300, vocab=vocab,
                      warmup_steps=400).model

gate_config = toy_setup.config("dec_gate")
tuned = Transformer(gate_config, vocab, seed=2)
for name, p in base.params.items():
    tuned.params[name] = p                     # adopt the trained main network
before = {name: p.data.copy() for name, p in tuned.params.items()}

multimodal = toy_setup.samples(src, tgt, vocab, feats)
frozen = ("embed", "out", "enc.", "dec.")
result = training.train(multimodal, gate_config, seed=3, steps=60, vocab=vocab,
                        warmup_steps=50, resume_model=tuned, freeze_prefixes=frozen)
moved = sorted(n for n, p in result.model.params.items()
               if not np.array_equal(p.data, before[n]))
print("  parameters that moved during finetuning:", moved)
print("  embedding untouched:",
      np.array_equal(result.model.params["embed.table"].data, before["embed.table"]))

print("\n== decode with the finetuned gate ==")
outputs = translate_corpus(result.model, [s.src_ids for s in multimodal],
                           [s.visual for s in multimodal], width=4)
print("  first output ids:", outputs[0])
