"""
A controllable domain shift
===========================

The synthetic generator writes a source and a target corpus sharing a
template grammar but with a tunable fraction of shared words, plus a few
target-only "planted" tokens.  Unigram density ratios and n-gram overlap
selection are the two lenses used to inspect the shift.
"""

import numpy as np

from advmask import corpus

cfg = corpus.SyntheticConfig(n_source=1000, n_target=1000, n_pool=500, shared_fraction=0.3, seed=0)
shift = corpus.generate_synthetic_shift(cfg)
for s in shift.source[:2] + shift.target[:2]:
    print(s.domain, " ".join(f"{t}/{lab}" for t, lab in zip(s.tokens, s.labels)))

print("vocabulary overlap (%)", round(corpus.vocab_overlap(shift.source, shift.target), 1),
      " expected", round(corpus.expected_overlap(cfg), 1))

# tokens much more likely in the target get a density ratio near 1
lm_s, lm_t = corpus.domain_unigrams(shift.source, shift.target)
ranked = sorted(lm_s.vocabulary, key=lambda w: corpus.density_ratio(lm_s, lm_t, w), reverse=True)
print("most target-specific:", [(w, round(corpus.density_ratio(lm_s, lm_t, w), 3)) for w in ranked[:6]])
print("planted tokens:", shift.lexicon.planted)

# pick pool sentences that look most like the target
idx, scores = corpus.ngram_select(shift.pool, shift.target, top_n=100)
target_only = corpus.target_exclusive_tokens(shift.source, shift.target)
hit = lambda s: any(t in target_only for t in s.tokens)
print(f"selected pool share with target-only words {np.mean([hit(shift.pool[i]) for i in idx]):.2f}"
      f" vs whole pool {np.mean([hit(s) for s in shift.pool]):.2f}")

# equal-size mixing: the smaller side is oversampled, pairs are coin-flipped
mixed = corpus.mix_domains(shift.source[:600], shift.target[:200], np.random.default_rng(0))
print("mixed size", len(mixed), "target share", np.mean([s.domain == "target" for s in mixed]))
