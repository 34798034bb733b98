"""Balanced multilingual BPE: learning, hyphen forcing, exact roundtrip.

Run:  python demos/03_subword_bpe.py
"""

from tinymmt import bpe

EN = ["the red dog runs quickly .", "an e-mail arrived today .",
      "the old man walks slowly ."]
DE = ["der rote hund rennt schnell .", "eine e-mail kam heute an .",
      "der alte mann geht langsam ."]

print("== per-language word counts, then balancing ==")
per_lang = {"en": bpe.word_counts([l.split() for l in EN]),
            "de": bpe.word_counts([l.split() for l in DE])}
for lang, counts in per_lang.items():
    print(f"  {lang}: {sum(counts.values()):.0f} words, {len(counts)} types")
balanced = bpe.balance_counts(per_lang)
for lang, counts in balanced.items():
    print(f"  {lang} balanced total: {sum(counts.values()):.4f}")

print("\n== learning 40 merges on the combined counts ==")
model = bpe.learn(bpe.merge_counts(balanced), target_size=40)
print("first ten merges:", model.merges[:10])
print("hyphens never participate:", all("-" not in a and "-" not in b
                                        for a, b in model.merges))

print("\n== applying the model ==")
for line in (EN[1], DE[1], "<TO_DE> <DOM_CAP> the red dog"):
    tokens = line.split()
    units = bpe.apply(model, tokens)
    restored = bpe.detokenize(units)
    print(f"  {' '.join(units)}")
    assert restored == tokens, "roundtrip must be exact"
print("roundtrip: exact on every line (special tokens pass through untouched)")

print("\n== the forced hyphen boundary ==")
print("  e-mail ->", bpe.apply(model, ["e-mail"]))
