"""
Choosing which tokens to hide
=============================

Every strategy masks exactly ``K = round(0.15 * n)`` positions (at least
one) and then corrupts each chosen position as [MASK] 80%, a random token
10% or the original token 10% of the time.  Strategies differ only in how
the positions are picked.
"""

from collections import Counter

import numpy as np

from advmask import adversarial, corpus, masking, mlm

rng = np.random.default_rng(0)
shift = corpus.generate_synthetic_shift(corpus.SyntheticConfig(n_source=300, n_target=300, n_pool=0, seed=0))
vocab = corpus.Vocabulary.build(shift.source + shift.target)
sentences = vocab.tokenize(shift.target)
cfg = mlm.MlmConfig(vocab_size=len(vocab), hidden_size=16, num_layers=1, num_heads=2, ffn_size=32, max_seq_len=64)
model = mlm.MaskedLM(cfg, rng)
generator = adversarial.PuzzleGenerator(16, rng)

s = sentences[0]
print(" ".join(s.tokens))
for name in ("rand", "pos", "ent", "adv", "mix-adv"):
    plans, _ = masking.plan_batch(masking.parse_strategy(name), [s], rng, len(vocab), model=model,
                                  generator=generator)
    p = plans[0]
    print(f"{name:7s} positions {p.subset}  actions {[a.name for a in p.actions]}")

# how often each strategy hides content words (nouns, verbs, names, ...)
for name in ("rand", "pos"):
    tags = Counter()
    for _ in range(20):
        plans, _ = masking.plan_batch(masking.parse_strategy(name), sentences[:50], rng, len(vocab))
        for sent, plan in zip(sentences[:50], plans):
            tags.update(sent.tags[i] in masking.CONTENT_TAGS for i in plan.subset)
    print(f"{name}: content share {tags[True] / sum(tags.values()):.2f}")

print("K for lengths 1..20:", [masking.mask_count(n) for n in range(1, 21)])
