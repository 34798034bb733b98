"""Corpus cleaning recipes: the punctuation heuristic and the char-LM filter.

A noisy parallel corpus is scored two ways, then the best pairs are kept.
Run:  python demos/02_corpus_filtering.py
"""

from tinymmt.corpus import (CharNgramLM, RawPair, ScoredPair, build_char_whitelist,
                            charlm_filter, preprocess, punct_balance_score,
                            select_top_k)

NOISY = [
    ("a dog runs in the park .", "ein hund rennt im park ."),
    ("wait ... what ?", "was ?"),                          # unbalanced punctuation
    ("BUY NOW !!! CLICK !!!", "kauf !!!"),                 # punctuation soup
    ("a cat sleeps on the sofa .", "eine katze schlaeft auf dem sofa ."),
    ("a cat sleeps on the sofa .", "eine katze schlaeft auf dem sofa ."),  # duplicate
    ("subtitles line with weird char ☃", "untertitel mit schneemann ☃"),
    ("two children play outside .", "zwei kinder spielen draussen ."),
]

print("== preprocessing ==")
pairs = []
for i, (src, tgt) in enumerate(NOISY):
    s = " ".join(preprocess(src))
    t = " ".join(preprocess(tgt))
    pairs.append(RawPair(source=s, target=t, origin="subtitles", pair_id=i))
    print(f"  [{i}] {s}  |||  {t}")

print("\n== heuristic: terminal punctuation balance ==")
punct_scored = []
for p in pairs:
    score = punct_balance_score(p.source.split(), p.target.split())
    punct_scored.append(ScoredPair(pair=p, score=score))
    print(f"  [{p.pair_id}] score {score:+.0f}")
best = select_top_k(punct_scored, 4)
print("top-4 by punctuation:", [p.pair_id for p in best])

print("\n== char-LM filter: stages, then in-domain likelihood ==")
in_domain = ["ein hund rennt im park .", "eine katze schlaeft auf dem sofa .",
             "zwei kinder spielen draussen .", "ein mann isst langsam ."]
lm = CharNgramLM(order=6, smoothing=0.01).fit(in_domain)
whitelist = build_char_whitelist(in_domain + [p.source for p in pairs[:1]]
                                 + ["a dog runs in the park . cat sleeps on sofa two children play outside wait what buy now click"])
scored, stage_report = charlm_filter(pairs, lm, whitelist)
print(stage_report.render())
for sp in sorted(scored, key=lambda sp: -sp.score):
    print(f"  [{sp.pair.pair_id}] mean char logprob {sp.score:+.3f}  {sp.pair.target}")

print("\nselected pairs (top 3):", [p.pair_id for p in select_top_k(scored, 3)])
print("\nre-running the filter on its own survivors drops nothing:")
_, second = charlm_filter([sp.pair for sp in scored], lm, whitelist)
print(second.render())
