"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 1-7 are exact or statistical checks against independent oracles.
Criteria 8-12 train desk-scale models (5 paired seeds, about 7 minutes in
total on one core); 13 snapshots the default hyperparameters and 14 re-runs
CLI commands and compares their outputs byte for byte.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they
happen; they are also repeated in the terminal summary.
"""

import itertools
import math

import numpy as np
import pytest
from scipy import stats

from advmask import adversarial, cli, config, masking, mlm, pipeline, subsets
from advmask.config import RunConfig
from tests.conftest import ACCEPTANCE_LINES
from tests.gradcheck import check_grads
from tests.test_autodiff import PRIMITIVES

SEEDS = range(5)


def record(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    print("\n" + line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


# -- brute-force oracles ----------------------------------------------------------------------


def brute_partitions(p):
    """Z for every K at once: sum the weight of all 2^n subsets grouped by size."""
    n = len(p)
    masks = ((np.arange(2**n)[:, None] >> np.arange(n)) & 1).astype(bool)
    weights = np.where(masks, p, 1 - p).prod(axis=1)
    return np.bincount(masks.sum(axis=1), weights=weights, minlength=n + 1)


def brute_law(p, K):
    subsets_k = list(itertools.combinations(range(len(p)), K))
    w = np.array([np.prod([p[i] if i in s else 1 - p[i] for i in range(len(p))]) for s in subsets_k])
    return subsets_k, w / w.sum()


# -- exact and oracle suite --------------------------------------------------------------------


def test_criterion_01_partition_function():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        for n in range(1, 13):
            p = rng.uniform(0.02, 0.98, n)
            z = brute_partitions(p)
            for K in range(n + 1):
                got = math.exp(subsets.build_distribution(p, K).log_partition)
                worst = max(worst, abs(got - z[K]) / z[K])
    record(1, worst < 1e-10, f"max relative error {worst:.2e} over n<=12, all K, 100 seeds (< 1e-10)")


def test_criterion_02_chain_identity():
    rng = np.random.default_rng(2)
    p = rng.uniform(0.05, 0.95, 12)
    K = 5
    dist = subsets.build_distribution(p, K)
    idx, path = subsets.sample_hard_batch(dist, 10_000, rng)
    z = brute_partitions(p)[K]
    chosen = np.zeros((len(idx), len(p)), bool)
    np.put_along_axis(chosen, idx, True, axis=1)
    direct = np.where(chosen, np.log(p), np.log1p(-p)).sum(axis=1) - math.log(z)
    err = float(np.abs(path - direct).max())
    record(2, err < 1e-8, f"max |path - direct| {err:.2e} over 10000 samples (< 1e-8)")


def test_criterion_03_sampler_exactness():
    rng = np.random.default_rng(3)
    details, ok = [], True
    for _ in range(3):
        p = rng.uniform(0.05, 0.95, 8)
        dist = subsets.build_distribution(p, 3)
        support, exact = brute_law(p, 3)
        assert len(support) == 56
        idx, _ = subsets.sample_hard_batch(dist, 200_000, rng)
        index = {s: i for i, s in enumerate(support)}
        counts = np.bincount([index[tuple(int(x) for x in row)] for row in idx], minlength=56)
        tv = 0.5 * np.abs(counts / 200_000 - exact).sum()
        marg = subsets.inclusion_probabilities(dist)
        emp = np.bincount(idx.ravel(), minlength=8) / 200_000
        gap = float(np.abs(emp - marg).max())
        total = abs(marg.sum() - 3)
        ok &= tv < 0.01 and gap < 0.005 and total < 1e-8
        details.append(f"TV {tv:.4f} marg gap {gap:.4f} sum err {total:.1e}")
    record(3, ok, "; ".join(details))


def test_criterion_04_forced_moves():
    rng = np.random.default_rng(4)
    checked, bad = 0, 0
    for n in range(1, 11):
        for K in range(n + 1):
            dist = subsets.build_distribution(rng.uniform(0.05, 0.95, n), K)
            for j in range(n):
                for c in range(min(j, K) + 1):
                    if K - c > n - j:
                        continue
                    if n - j == K - c:
                        checked += 1
                        bad += subsets.step_probability(dist, j, c) != 1.0
                    elif c == K:
                        checked += 1
                        bad += subsets.step_probability(dist, j, c) != 0.0
    record(4, bad == 0, f"{checked} forced states checked, {bad} not exactly 0 or 1")


def test_criterion_05_variational_bound():
    V = 20
    violations, smallest = 0, math.inf
    for seed in range(100):
        rng = np.random.default_rng(seed)
        model = mlm.MaskedLM(mlm.MlmConfig(vocab_size=V, hidden_size=8, num_layers=1, num_heads=2, ffn_size=16,
                                           max_seq_len=16, dropout=0.1), rng)
        gen = adversarial.PuzzleGenerator(8, rng)
        sent = [int(t) for t in rng.integers(4, V, size=8)]
        probs = adversarial.selection_probs(gen, model, sent)
        support, weights = brute_law(probs, 2)
        plans = []
        for s in support:
            corrupted = [mlm.MASK if i in s else t for i, t in enumerate(sent)]
            plans.append(masking.MaskPlan(s, (masking.Action.MASK,) * 2, tuple(sent[i] for i in s),
                                          tuple(corrupted)))
        model.eval()
        nll = mlm.plan_nll(model, plans)
        margin = nll.max() - weights @ nll
        smallest = min(smallest, margin)
        violations += margin < 0
    record(5, violations == 0, f"100 triples, {violations} violations, smallest max-minus-expectation {smallest:.3e}")


def test_criterion_06_gradient_checks():
    failures = []
    for name, make in sorted(PRIMITIVES.items()):
        for seed in range(5):
            try:
                fn, inputs = make(np.random.default_rng(seed))
                check_grads(fn, inputs, rtol=1e-4)
            except AssertionError:
                failures.append(f"{name}/{seed}")
    model = mlm.MaskedLM(mlm.MlmConfig(vocab_size=12, hidden_size=8, num_layers=1, num_heads=2, ffn_size=16,
                                       max_seq_len=8, dropout=0.0), np.random.default_rng(0))
    model.eval()
    corrupted = (mlm.MASK, 5, 6, mlm.MASK, 8)
    plan = masking.MaskPlan((0, 3), (masking.Action.MASK,) * 2, (4, 7), corrupted)
    try:
        for probe in (model.tok_emb, model.pos_emb):
            check_grads(lambda: mlm.masked_nll(model, plan.corrupted_ids, plan), [probe], rtol=1e-4)
    except AssertionError:
        failures.append("masked-nll")
    rel = max(pipeline.relaxed_gradient_check(RunConfig(seed=s)) for s in range(5))
    if rel >= 1e-4:
        failures.append("relaxed-path")
    record(6, not failures, f"{len(PRIMITIVES)} primitives x 5 seeds, masked NLL, relaxed path (max rel {rel:.1e});"
                            f" failures: {failures or 'none'}")


def test_criterion_07_uniform_reduction():
    V, n, plans_total = 30, 10, 100_000
    model = mlm.MaskedLM(mlm.MlmConfig(vocab_size=V, hidden_size=8, num_layers=1, num_heads=2, ffn_size=16,
                                       max_seq_len=16, dropout=0.1), np.random.default_rng(0))
    gen = adversarial.PuzzleGenerator(8, np.random.default_rng(1)).zero_()
    rng = np.random.default_rng(7)
    sents = [list(rng.integers(4, V, size=n)) for _ in range(500)]
    counts = {}
    for name in ("adv", "rand"):
        c = np.zeros(n)
        for _ in range(plans_total // len(sents)):
            plans, _ = masking.plan_batch(masking.parse_strategy(name), sents, rng, V, 0.15, model, gen)
            for p in plans:
                c[list(p.subset)] += 1
        counts[name] = c
    _, p_value, _, _ = stats.chi2_contingency(np.stack([counts["adv"], counts["rand"]]))
    record(7, p_value > 0.001, f"chi-square p = {p_value:.3f} over {plans_total} plans per strategy (> 0.001)")


# -- training and directional suite ------------------------------------------------------------


def test_criterion_08_bandit():
    hits = []
    for seed in SEEDS:
        final, rewarded = adversarial.run_bandit(seed, steps=2000)
        hits.append(int(np.argmax(final)) == rewarded)
    record(8, sum(hits) >= 4, f"rewarded token has the largest pi in {sum(hits)}/5 seeds (>= 4)")


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    """Paired desk-scale runs: for each seed, adv/rand/pos from one pretrained model."""
    root = tmp_path_factory.mktemp("desk")
    rows = {}
    for seed in SEEDS:
        cfg = RunConfig(seed=seed, data_dir=str(root / f"data-{seed}"), out_dir=str(root / f"seed-{seed}"),
                        **config.DESK)
        rows[seed] = {r["strategy"]: r for r in pipeline.compare_strategies(cfg)}
    for seed, r in rows.items():
        print(f"\nseed {seed}: " + "  ".join(
            f"{s} r={r[s]['density_ratio_mean']:.3f} nll={r[s]['target_token_nll']:.3f} f1={r[s]['f1']:.2f} "
            f"content={r[s]['content_fraction']:.3f}" for s in ("adv", "rand", "pos")))
    return rows


def _pair(rows, metric):
    return np.array([[rows[s]["adv"][metric], rows[s]["rand"][metric]] for s in SEEDS])


def test_criterion_09_density_ratio(desk_runs):
    d = _pair(desk_runs, "density_ratio_mean")
    wins = int((d[:, 0] > d[:, 1]).sum())
    record(9, wins >= 4, f"adv masked-token density ratio above rand in {wins}/5 seeds (>= 4);"
                         f" means {d[:, 0].mean():.3f} vs {d[:, 1].mean():.3f}")


def test_criterion_10_target_token_nll(desk_runs):
    d = _pair(desk_runs, "target_token_nll")
    record(10, d[:, 0].mean() < d[:, 1].mean(),
           f"target-exclusive NLL adv {d[:, 0].mean():.3f} vs rand {d[:, 1].mean():.3f} (paired mean, lower wins)")


def test_criterion_11_downstream_f1(desk_runs):
    d = _pair(desk_runs, "f1")
    gap = d[:, 0].mean() - d[:, 1].mean()
    record(11, gap >= 0, f"zero-shot F1 adv {d[:, 0].mean():.2f} vs rand {d[:, 1].mean():.2f}, gap {gap:+.2f}"
                         f" (per seed {np.round(d[:, 0] - d[:, 1], 2).tolist()})")


def test_criterion_12_strategy_accounting(desk_runs):
    frac = {s: np.mean([desk_runs[k][s]["content_fraction"] for k in SEEDS]) for s in ("pos", "adv", "rand")}
    order = " > ".join(sorted(frac, key=frac.get, reverse=True))
    record(12, frac["pos"] > frac["rand"],
           f"content fraction pos {frac['pos']:.3f} adv {frac['adv']:.3f} rand {frac['rand']:.3f};"
           f" measured order {order} (required: pos > rand)")


def test_criterion_13_default_hyperparameters():
    cfg = RunConfig()
    adv = adversarial.AdversarialConfig()
    gen = adversarial.PuzzleGenerator(cfg.hidden_size, np.random.default_rng(0))
    snapshot = {
        "mask_ratio": (cfg.mask_ratio, adv.mask_ratio, masking.MASK_RATIO),
        "corruption": masking.CORRUPTION,
        "beta": (cfg.beta, adv.beta),
        "generator": (gen.fc1.weight.shape[1], gen.fc2.weight.shape, gen.dropout, cfg.generator_hidden,
                      cfg.generator_dropout),
        "lr": (cfg.lr, cfg.generator_lr, cfg.task_lr, adv.lr_mlm, adv.lr_generator),
        "batch": (cfg.batch, cfg.task_batch, adv.batch_size),
        "max_seq_len": cfg.max_seq_len,
        "task_epochs": cfg.task_epochs,
    }
    expected = {
        "mask_ratio": (0.15, 0.15, 0.15),
        "corruption": (0.8, 0.1, 0.1),
        "beta": (0.3, 0.3),
        "generator": (256, (256, 1), 0.1, 256, 0.1),
        "lr": (5e-5,) * 5,
        "batch": (32, 32, 32),
        "max_seq_len": 128,
        "task_epochs": 3,
    }
    wrong = [k for k in expected if snapshot[k] != expected[k]]
    record(13, not wrong, f"defaults snapshot: {len(expected)} groups checked, mismatches: {wrong or 'none'}")


def test_criterion_14_determinism(tmp_path):
    small = ["--n-source", "200", "--n-target", "200", "--n-target-test", "50", "--n-pool", "20",
             "--hidden-size", "16", "--num-layers", "1", "--num-heads", "2", "--ffn-size", "32", "--max-seq-len", "32",
             "--steps", "30", "--batch", "16", "--lr", "1e-3", "--generator-lr", "1e-3", "--task-epochs", "1",
             "--seed", "11"]
    outputs = {}
    for attempt in ("first", "second"):
        base = [*small, "--data-dir", str(tmp_path / attempt / "data"), "--out-dir", str(tmp_path / attempt / "run")]
        for command in ("gen-data", "domain-tune", "finetune", "eval"):
            assert cli.main([command, *base]) == 0
        run = tmp_path / attempt / "run"
        data = tmp_path / attempt / "data"
        outputs[attempt] = {f: (run / f).read_bytes() for f in ("metrics.csv", "masked_density.csv", "mlm.npz",
                                                                 "predictions.txt", "report.json")}
        outputs[attempt].update({f: (data / f).read_bytes() for f in pipeline.DATA_FILES.values()})
    differing = [f for f in outputs["first"] if outputs["first"][f] != outputs["second"][f]]
    record(14, not differing, f"{len(outputs['first'])} artifacts from gen-data/domain-tune/finetune/eval re-run;"
                              f" differing: {differing or 'none'}")

