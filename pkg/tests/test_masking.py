from collections import namedtuple

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advmask import adversarial, masking, mlm
from advmask.subsets import build_distribution, inclusion_probabilities

Tagged = namedtuple("Tagged", "ids tags")
V = 30


def tiny_model(seed=0):
    cfg = mlm.MlmConfig(vocab_size=V, hidden_size=8, num_layers=1, num_heads=2, ffn_size=16, max_seq_len=48)
    return mlm.MaskedLM(cfg, np.random.default_rng(seed))


@pytest.mark.parametrize("n,k", [(1, 1), (3, 1), (10, 2), (20, 3), (30, 5), (7, 1), (100, 15)])
def test_mask_count_rounding(n, k):
    assert masking.mask_count(n) == k


def test_mask_count_rounds_half_up():
    assert masking.mask_count(10, 0.25) == 3
    assert masking.mask_count(4, 0.0) == 1
    assert masking.mask_count(3, 1.0) == 3


def test_single_token_always_selected():
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert masking.plan_random([7], 0.15, rng, V).subset == (0,)


def test_random_marginals_are_k_over_n():
    rng = np.random.default_rng(1)
    n, draws = 10, 100_000
    counts = np.zeros(n)
    for _ in range(draws):
        counts[list(masking.plan_random(list(range(4, 4 + n)), 0.15, rng, V).subset)] += 1
    np.testing.assert_allclose(counts / draws, 2 / n, atol=0.005)


def test_corruption_frequencies():
    rng = np.random.default_rng(2)
    ids = list(range(4, 24))
    subset = tuple(range(20))
    counts = np.zeros(3)
    for _ in range(5000):
        _, actions = masking.corrupt(ids, subset, rng, V)
        counts += np.bincount(actions, minlength=3)
    freq = counts / counts.sum()
    assert freq[masking.Action.MASK] == pytest.approx(0.8, abs=0.005)
    assert freq[masking.Action.RANDOM] == pytest.approx(0.1, abs=0.005)
    assert freq[masking.Action.KEEP] == pytest.approx(0.1, abs=0.005)


def test_corruption_actions_act_as_described():
    rng = np.random.default_rng(3)
    ids = list(range(4, 24))
    for _ in range(2000):
        plan = masking.make_plan(ids, (1, 5, 9), rng, V)
        for pos, act in zip(plan.subset, plan.actions):
            got = plan.corrupted_ids[pos]
            if act == masking.Action.MASK:
                assert got == mlm.MASK
            elif act == masking.Action.RANDOM:
                assert got >= len(mlm.RESERVED)
            else:
                assert got == ids[pos]
        untouched = [i for i in range(len(ids)) if i not in plan.subset]
        assert all(plan.corrupted_ids[i] == ids[i] for i in untouched)
        assert plan.ground_truth == tuple(ids[i] for i in plan.subset)


def test_tag_weighted_requires_tags():
    with pytest.raises(masking.TaggedInputRequiredError):
        masking.plan_tag_weighted([4, 5, 6], (0.8, 0.2), 0.15, np.random.default_rng(0), V)


def test_tag_weighted_all_content_is_uniform():
    probs = masking.tag_selection_probs(["NOUN"] * 6, 2)
    np.testing.assert_allclose(inclusion_probabilities(build_distribution(probs, 2)), 2 / 6, atol=1e-12)


def test_tag_weighted_marginals_match_dp():
    tags = ["NOUN", "DET", "VERB", "ADP", "ADJ", "PUNCT", "PRON", "DET"]
    sent = Tagged(list(range(4, 12)), tags)
    K = 2
    expect = inclusion_probabilities(build_distribution(masking.tag_selection_probs(tags, K), K))
    rng = np.random.default_rng(4)
    counts = np.zeros(8)
    draws = 100_000
    for _ in range(draws):
        counts[list(masking.plan_tag_weighted(sent, (0.8, 0.2), 0.25, rng, V).subset)] += 1
    np.testing.assert_allclose(counts / draws, expect, atol=0.005)
    content = [i for i, t in enumerate(tags) if t in masking.CONTENT_TAGS]
    other = [i for i in range(8) if i not in content]
    assert expect[content].min() > expect[other].max()


def test_entropy_ties_take_first_positions():
    assert masking.top_k_entropy(np.zeros(6), 2) == (0, 1)
    model = tiny_model()
    for p in model.parameters():
        p.data[...] = 0.0
    plan = masking.plan_entropy(list(range(4, 24)), model, 0.15, np.random.default_rng(0), V)
    assert plan.subset == (0, 1, 2)


def test_entropy_never_picks_certain_token():
    ent = np.array([2.0, 0.0, 2.0, 1.5, 1.0])
    for k in range(1, 5):
        assert 1 not in masking.top_k_entropy(ent, k)


def test_zero_generator_gives_uniform_pi():
    model = tiny_model()
    gen = adversarial.PuzzleGenerator(8, np.random.default_rng(0)).zero_()
    pi = adversarial.selection_probs(gen, model, list(range(4, 14)))
    np.testing.assert_array_equal(pi, 0.5)
    marg = inclusion_probabilities(build_distribution(pi, 2))
    np.testing.assert_allclose(marg, 0.2, atol=1e-12)


def test_adversarial_replay_is_identical():
    model = tiny_model()
    gen = adversarial.PuzzleGenerator(8, np.random.default_rng(1))
    sents = [list(range(4, 14)), list(range(10, 17))]

    def run():
        rng = np.random.default_rng(9)
        drop = np.random.default_rng(10)
        return masking.plan_batch(masking.Adversarial(), sents, rng, V, 0.15, model, gen, drop)

    (p1, s1), (p2, s2) = run(), run()
    assert p1 == p2
    assert [s.indices for s in s1] == [s.indices for s in s2]
    assert all(s.path_log_prob.requires_grad for s in s1)


def test_adversarial_sampling_does_not_touch_model_graph():
    model = tiny_model()
    gen = adversarial.PuzzleGenerator(8, np.random.default_rng(1))
    (plan, drawn), = masking.plan_adversarial_batch([list(range(4, 14))], gen, model, 0.15, 1.0,
                                                   np.random.default_rng(0), V)
    from advmask import autodiff as ad
    ad.backward(drawn.path_log_prob)
    assert all(p.grad is None for p in model.parameters())
    assert any(p.grad is not None and np.any(p.grad != 0) for p in gen.parameters())


def test_mixed_fraction():
    rng = np.random.default_rng(5)
    strat = masking.parse_strategy("mix-pos")
    sents = [Tagged(list(range(4, 14)), ["NOUN"] * 10) for _ in range(200)]
    inner = 0
    for _ in range(50):
        plans, _ = masking.plan_batch(strat, sents, rng, V)
        inner += sum(p.strategy == "pos" for p in plans)
    assert inner / (50 * 200) == pytest.approx(0.5, abs=0.01)


def test_parse_strategy():
    assert masking.parse_strategy("rand").name == "rand"
    assert masking.parse_strategy("mix-adv").name == "mix-adv"
    assert masking.needs_generator(masking.parse_strategy("mix-adv"))
    with pytest.raises(ValueError):
        masking.parse_strategy("mix-rand")
    with pytest.raises(ValueError):
        masking.parse_strategy("span")


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.sampled_from(["rand", "pos", "ent", "adv", "mix-ent"]), st.integers(0, 10_000))
def test_every_strategy_masks_exactly_k(n, name, seed):
    rng = np.random.default_rng(seed)
    model = tiny_model()
    gen = adversarial.PuzzleGenerator(8, np.random.default_rng(seed))
    tags = [("NOUN", "DET")[i % 2] for i in range(n)]
    sent = Tagged(list(rng.integers(4, V, size=n)), tags)
    plans, _ = masking.plan_batch(masking.parse_strategy(name), [sent], rng, V, 0.15, model, gen, rng)
    assert len(plans[0].subset) == masking.mask_count(n)
    assert len(set(plans[0].subset)) == len(plans[0].subset)
