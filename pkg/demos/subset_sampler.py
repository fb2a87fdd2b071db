"""
Drawing fixed-size subsets with per-item weights
================================================

Each position ``i`` gets a probability ``pi_i``.  We want subsets of exactly
``K`` positions, with ``Pr(S)`` proportional to the product of ``pi`` over
chosen items and ``1 - pi`` over the rest.  A small dynamic program gives
the normalizer, the exact sampler and the inclusion marginals.
"""

import math

import numpy as np

from advmask import subsets

rng = np.random.default_rng(0)
pi = np.array([0.1, 0.2, 0.3, 0.4, 0.9])
K = 2

# the normalizer, computed in log space
dist = subsets.build_distribution(pi, K)
print("Z from the DP     ", math.exp(dist.log_partition))
print("Z by enumeration  ", subsets.partition_by_enumeration(pi, K))

# exact probabilities of every 2-subset
for subset, prob in subsets.enumerate_support(pi, K):
    print(subset, f"{prob:.4f}")

# the sampler walks left to right, deciding yes/no with the right odds
idx, log_probs = subsets.sample_hard_batch(dist, 100_000, rng)
empirical = np.bincount(idx.ravel(), minlength=len(pi)) / len(idx)
print("inclusion (exact)    ", np.round(subsets.inclusion_probabilities(dist), 4))
print("inclusion (sampled)  ", np.round(empirical, 4))

# once the quota is full or every remaining item is needed, the move is forced
print("step prob, quota full:", subsets.step_probability(dist, 4, 2))
print("step prob, must take :", subsets.step_probability(dist, 4, 1))

# the relaxed sampler keeps the same hard choice but exposes a smooth
# path log-probability and its gradient wrt pi (noise held fixed)
drawn = subsets.sample_relaxed(dist, temperature=0.5, rng=rng)
print("relaxed draw", drawn.indices, "exact log q", round(drawn.hard_log_prob, 4),
      "relaxed", round(drawn.relaxed_log_prob, 4))
print("d relaxed / d pi", np.round(drawn.relaxed_grad, 4))
