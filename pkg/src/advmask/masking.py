"""Masking strategies and BERT-style 80/10/10 corruption.

Every strategy picks the same number of positions for a given sentence,
``K = max(1, round_half_up(mask_ratio * n))``; strategies differ only in
which positions they choose.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import mlm
from .subsets import SampledSubset, build_distribution, sample_hard, sample_relaxed

MASK_RATIO = 0.15
CORRUPTION = (0.8, 0.1, 0.1)  # MASK, RANDOM, KEEP
CONTENT_TAGS = frozenset({"NOUN", "PROPN", "VERB", "ADJ", "PRON", "ADV"})


class Action(enum.IntEnum):
    KEEP = 0
    MASK = 1
    RANDOM = 2


class TaggedInputRequiredError(ValueError):
    pass


class WiringError(RuntimeError):
    """The generator's loss is not connected to its parameters."""


@dataclass(frozen=True)
class MaskPlan:
    """Which positions are hidden, how each is corrupted, and what to predict."""

    subset: tuple
    actions: tuple
    ground_truth: tuple
    corrupted_ids: tuple
    strategy: str = ""

    def __len__(self):
        return len(self.subset)


def mask_count(n: int, mask_ratio: float = MASK_RATIO) -> int:
    """``max(1, round_half_up(mask_ratio * n))``, capped at ``n``."""
    return min(n, max(1, math.floor(mask_ratio * n + 0.5)))


def token_ids(sentence):
    ids = getattr(sentence, "ids", sentence)
    return tuple(int(i) for i in ids)


def corrupt(sentence, subset, rng, vocab_size, proportions=CORRUPTION):
    """Apply MASK / random token / keep independently to each selected position.

    Random replacements are drawn uniformly from the non-reserved ids.
    Returns ``(corrupted_ids, actions)``.
    """
    ids = list(token_ids(sentence))
    p_mask, p_rand, _ = proportions
    actions = []
    for pos in subset:
        u = rng.random()
        if u < p_mask:
            ids[pos] = mlm.MASK
            actions.append(Action.MASK)
        elif u < p_mask + p_rand:
            ids[pos] = int(rng.integers(len(mlm.RESERVED), vocab_size))
            actions.append(Action.RANDOM)
        else:
            actions.append(Action.KEEP)
    return tuple(ids), tuple(actions)


def make_plan(sentence, subset, rng, vocab_size, strategy=""):
    ids = token_ids(sentence)
    subset = tuple(sorted(int(i) for i in subset))
    corrupted, actions = corrupt(ids, subset, rng, vocab_size)
    return MaskPlan(subset, actions, tuple(ids[i] for i in subset), corrupted, strategy)


def plan_random(sentence, mask_ratio, rng, vocab_size):
    """Uniformly random size-K subset."""
    n = len(token_ids(sentence))
    subset = rng.choice(n, size=mask_count(n, mask_ratio), replace=False)
    return make_plan(sentence, subset, rng, vocab_size, "random")


def tag_selection_probs(tags, K, content_weight=0.8, other_weight=0.2):
    """Per-token inclusion weights scaled so they sum to ``K``."""
    if tags is None or any(t is None for t in tags):
        raise TaggedInputRequiredError("tag-weighted masking needs a tag for every token")
    w = np.array([content_weight if t in CONTENT_TAGS else other_weight for t in tags])
    return K * w / w.sum()


def plan_tag_weighted(sentence, weights, mask_ratio, rng, vocab_size):
    """Fixed-size subset biased towards content-word tags.

    ``weights`` is ``(content_weight, other_weight)``.  The scaled weights are
    used as selection probabilities of the fixed-size subset distribution.
    """
    tags = getattr(sentence, "tags", None)
    n = len(token_ids(sentence))
    K = mask_count(n, mask_ratio)
    probs = tag_selection_probs(tags, K, *weights)
    drawn = sample_hard(build_distribution(probs, K), rng)
    return make_plan(sentence, drawn.indices, rng, vocab_size, "pos")


def top_k_entropy(entropies, K):
    """Indices of the ``K`` largest entropies; ties go to the lower index."""
    order = np.lexsort((np.arange(len(entropies)), -np.asarray(entropies)))
    return tuple(sorted(int(i) for i in order[:K]))


def plan_entropy(sentence, model, mask_ratio, rng, vocab_size):
    """Deterministic top-K positions by one-pass predictive entropy."""
    ids = token_ids(sentence)
    ent = mlm.position_entropies(model, ids)
    return make_plan(sentence, top_k_entropy(ent, mask_count(len(ids), mask_ratio)), rng, vocab_size, "ent")


def path_log_prob_tensor(probs: ad.Tensor, sample: SampledSubset) -> ad.Tensor:
    """Lift the relaxed path log-probability into the autodiff graph of ``probs``."""
    grad = sample.relaxed_grad
    return ad.custom(np.asarray(sample.relaxed_log_prob), (probs,), lambda g: (g * grad,))


def hidden_states(model, sentences):
    """Last-layer hidden states in eval mode, no graph into the model."""
    ids, pad = mlm.pad_batch([token_ids(s) for s in sentences])
    was_training = model.training
    model.eval()
    try:
        with ad.no_grad():
            _, hidden = model(ids, pad)
    finally:
        model.train(was_training)
    return hidden.data, pad


def plan_adversarial_batch(sentences, generator, model, mask_ratio, temperature, rng, vocab_size,
                           dropout_rng=None, gumbel_rng=None):
    """Adversarial plans for a batch sharing one generator graph.

    Returns a list of ``(MaskPlan, SampledSubset)``.  Each sample's
    ``path_log_prob`` is a scalar tensor differentiable in the generator's
    parameters; the model only supplies (detached) features.  Gumbel noise
    comes from ``gumbel_rng`` when given, else from ``rng``.
    """
    hidden, pad = hidden_states(model, sentences)
    probs = generator(ad.Tensor(hidden), rng=dropout_rng)
    out = []
    for b, sentence in enumerate(sentences):
        n = int(pad[b].sum())
        pi = probs[b, :n]
        dist = build_distribution(pi.data, mask_count(n, mask_ratio))
        drawn = sample_relaxed(dist, temperature, rng if gumbel_rng is None else gumbel_rng)
        drawn = dataclasses.replace(drawn, path_log_prob=path_log_prob_tensor(pi, drawn))
        out.append((make_plan(sentence, drawn.indices, rng, vocab_size, "adv"), drawn))
    return out


def plan_adversarial(sentence, generator, model, mask_ratio, temperature, rng, vocab_size, dropout_rng=None,
                     gumbel_rng=None):
    """Sample a subset from the generator's distribution over size-K subsets."""
    return plan_adversarial_batch([sentence], generator, model, mask_ratio, temperature, rng,
                                  vocab_size, dropout_rng, gumbel_rng)[0]


# -- strategy descriptors ----------------------------------------------------------------


@dataclass(frozen=True)
class Random:
    name = "rand"


@dataclass(frozen=True)
class TagWeighted:
    content_weight: float = 0.8
    other_weight: float = 0.2
    name = "pos"


@dataclass(frozen=True)
class Entropy:
    name = "ent"


@dataclass(frozen=True)
class Adversarial:
    temperature: float = 1.0
    name = "adv"


@dataclass(frozen=True)
class Mixed:
    """Per sentence: random masking with probability ``random_fraction``, else ``inner``."""

    inner: object
    random_fraction: float = 0.5

    @property
    def name(self):
        return f"mix-{self.inner.name}"


STRATEGIES = {
    "rand": Random(),
    "pos": TagWeighted(),
    "ent": Entropy(),
    "adv": Adversarial(),
}


def parse_strategy(name: str):
    """``rand``, ``pos``, ``ent``, ``adv`` or a ``mix-`` prefixed variant."""
    if name.startswith("mix-"):
        inner = STRATEGIES.get(name[4:])
        if inner is None or isinstance(inner, Random):
            raise ValueError(f"unknown mixed strategy {name!r}")
        return Mixed(inner)
    if name not in STRATEGIES:
        raise ValueError(f"unknown strategy {name!r}; choose from {sorted(STRATEGIES)} or mix-*")
    return STRATEGIES[name]


def needs_generator(strategy) -> bool:
    return isinstance(getattr(strategy, "inner", strategy), Adversarial)


def plan_batch(strategy, sentences, rng, vocab_size, mask_ratio=MASK_RATIO, model=None, generator=None,
               dropout_rng=None, gumbel_rng=None):
    """Plan a batch under ``strategy``.

    Returns ``(plans, samples)`` where ``samples[i]`` is the adversarial
    :class:`SampledSubset` for sentence ``i`` or ``None``.
    """
    if isinstance(strategy, Mixed):
        inner_rows = [i for i in range(len(sentences)) if rng.random() >= strategy.random_fraction]
        chosen = set(inner_rows)
        plans, samples = [None] * len(sentences), [None] * len(sentences)
        if inner_rows:
            ip, isamp = plan_batch(strategy.inner, [sentences[i] for i in inner_rows], rng, vocab_size,
                                   mask_ratio, model, generator, dropout_rng, gumbel_rng)
            for i, p, s in zip(inner_rows, ip, isamp):
                plans[i], samples[i] = p, s
        for i in range(len(sentences)):
            if i not in chosen:
                plans[i] = plan_random(sentences[i], mask_ratio, rng, vocab_size)
        return plans, samples
    if isinstance(strategy, Random):
        return [plan_random(s, mask_ratio, rng, vocab_size) for s in sentences], [None] * len(sentences)
    if isinstance(strategy, TagWeighted):
        w = (strategy.content_weight, strategy.other_weight)
        return [plan_tag_weighted(s, w, mask_ratio, rng, vocab_size) for s in sentences], [None] * len(sentences)
    if isinstance(strategy, Entropy):
        ids, pad = mlm.pad_batch([token_ids(s) for s in sentences])
        was_training = model.training
        model.eval()
        try:
            with ad.no_grad():
                logits, _ = model(ids, pad)
        finally:
            model.train(was_training)
        ent = mlm.entropies_from_logits(logits.data)
        plans = []
        for b, s in enumerate(sentences):
            n = int(pad[b].sum())
            subset = top_k_entropy(ent[b, :n], mask_count(n, mask_ratio))
            plans.append(make_plan(s, subset, rng, vocab_size, "ent"))
        return plans, [None] * len(sentences)
    if isinstance(strategy, Adversarial):
        drawn = plan_adversarial_batch(sentences, generator, model, mask_ratio, strategy.temperature, rng,
                                       vocab_size, dropout_rng, gumbel_rng)
        return [p for p, _ in drawn], [s for _, s in drawn]
    raise TypeError(f"unsupported strategy {strategy!r}")
