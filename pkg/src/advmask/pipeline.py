"""End-to-end steps: data generation, domain tuning, task tuning, evaluation and analysis.

Every step reads a :class:`~advmask.config.RunConfig` and works on files, so
runs can be resumed and compared.  Layout::

    data_dir/  source.jsonl target.jsonl target_test.jsonl pool.jsonl vocab.txt manifest.json
    out_dir/   mlm.npz mlm.cfg generator.npz metrics.csv masked_density.csv run.json
               task-mlm.npz task-head.npz predictions.txt report.json
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import adversarial, corpus, masking, mlm, nn, subsets, taskeval
from .config import RunConfig, stream, streams

DATA_FILES = {
    "source": "source.jsonl", "target": "target.jsonl", "target_test": "target_test.jsonl",
    "pool": "pool.jsonl", "vocab": "vocab.txt", "manifest": "manifest.json",
}


class MissingArtifactError(FileNotFoundError):
    pass


class VerificationError(AssertionError):
    pass


def _need(path):
    if not os.path.exists(path):
        raise MissingArtifactError(f"missing artifact: {path}")
    return path


def _data_path(cfg, key):
    return os.path.join(cfg.data_dir, DATA_FILES[key])


def _out(cfg, name):
    return os.path.join(cfg.out_dir, name)


# -- data --------------------------------------------------------------------------------------


def synthetic_config(cfg: RunConfig) -> corpus.SyntheticConfig:
    return corpus.SyntheticConfig(
        n_source=cfg.n_source, n_target=cfg.n_target, n_target_test=cfg.n_target_test, n_pool=cfg.n_pool,
        shared_fraction=cfg.shared_fraction, n_templates=cfg.n_templates, entity_rate=cfg.entity_rate,
        n_planted=cfg.n_planted, planted_rate=cfg.planted_rate, seed=cfg.seed,
    )


def gen_data(cfg: RunConfig):
    """Write the synthetic corpora, vocabulary and a manifest; returns the manifest."""
    shift = corpus.generate_synthetic_shift(synthetic_config(cfg), stream(cfg.seed, "data"))
    os.makedirs(cfg.data_dir, exist_ok=True)
    pool = shift.pool
    if cfg.select_top_n > 0 and pool:
        idx, _ = corpus.ngram_select(pool, shift.target, cfg.select_top_n)
        pool = [pool[i] for i in idx]
    for key, data in (("source", shift.source), ("target", shift.target), ("target_test", shift.target_test),
                      ("pool", pool)):
        corpus.write_jsonl(_data_path(cfg, key), data)
    vocab = corpus.Vocabulary.build(shift.source + shift.target + pool)
    vocab.save(_data_path(cfg, "vocab"))
    manifest = {
        "seed": cfg.seed,
        "synthetic": dataclasses.asdict(synthetic_config(cfg)),
        "counts": {"source": len(shift.source), "target": len(shift.target),
                   "target_test": len(shift.target_test), "pool": len(pool)},
        "vocab_size": len(vocab),
        "vocab_overlap": corpus.vocab_overlap(shift.source, shift.target),
        "planted": list(shift.lexicon.planted),
    }
    with open(_data_path(cfg, "manifest"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


@dataclass
class Data:
    vocab: corpus.Vocabulary
    source: list
    target: list
    target_test: list
    pool: list


def load_data(cfg: RunConfig) -> Data:
    vocab = corpus.Vocabulary.load(_need(_data_path(cfg, "vocab")))
    parts = {k: vocab.tokenize(corpus.read_jsonl(_need(_data_path(cfg, k))))
             for k in ("source", "target", "target_test", "pool")}
    return Data(vocab, **parts)


# -- models --------------------------------------------------------------------------------------


def model_config(cfg: RunConfig, vocab_size) -> mlm.MlmConfig:
    return mlm.MlmConfig(vocab_size=vocab_size, hidden_size=cfg.hidden_size, num_layers=cfg.num_layers,
                         num_heads=cfg.num_heads, ffn_size=cfg.ffn_size, max_seq_len=cfg.max_seq_len,
                         dropout=cfg.dropout)


def adversarial_config(cfg: RunConfig, steps=None, lr=None) -> adversarial.AdversarialConfig:
    return adversarial.AdversarialConfig(
        beta=cfg.beta, mask_ratio=cfg.mask_ratio, mc_samples=cfg.mc_samples, temperature=cfg.temperature,
        lr_mlm=cfg.lr if lr is None else lr, lr_generator=cfg.generator_lr, batch_size=cfg.batch,
        max_steps=cfg.steps if steps is None else steps, per_sentence_coin=cfg.per_sentence_coin,
        log_wallclock=cfg.log_wallclock,
    )


def pretrain(cfg: RunConfig, data: Data):
    """Fresh model trained with random masking on source text only.

    Stands in for an off-the-shelf pretrained encoder.  Depends only on the
    seed and model settings, so every strategy of a seed starts from the same
    weights.
    """
    model = mlm.MaskedLM(model_config(cfg, len(data.vocab)), stream(cfg.seed, "init"))
    if cfg.pretrain_steps:
        rng = stream(cfg.seed, "pretrain")
        rngs = {k: np.random.default_rng(rng.integers(2**63)) for k in ("data", "masking", "dropout", "coin")}
        source = data.source
        adversarial.train_domain(lambda r: [source[i] for i in r.permutation(len(source))], model,
                                 masking.Random(), adversarial_config(cfg, cfg.pretrain_steps, cfg.pretrain_lr),
                                 rngs)
    return model


def initial_model(cfg: RunConfig, data: Data):
    if cfg.init_checkpoint:
        weights = _need(cfg.init_checkpoint)
        model = mlm.MaskedLM(model_config(cfg, len(data.vocab)), stream(cfg.seed, "init"))
        model.load_state_dict(nn.load_checkpoint(weights))
        return model
    return pretrain(cfg, data)


def target_token_nll(model, sentences, token_ids, limit=2000):
    """Mean NLL of target-exclusive tokens, each masked alone in its sentence."""
    plans = []
    for s in sentences:
        for i, tok in enumerate(s.ids):
            if tok in token_ids:
                corrupted = list(s.ids)
                corrupted[i] = mlm.MASK
                plans.append(masking.MaskPlan((i,), (masking.Action.MASK,), (tok,), tuple(corrupted)))
    plans = plans[:limit]
    if not plans:
        return float("nan")
    return float(np.mean(np.concatenate([mlm.plan_nll(model, plans[i:i + 256])
                                         for i in range(0, len(plans), 256)])))


def target_exclusive_ids(data: Data):
    return {data.vocab.stoi[t] for t in corpus.target_exclusive_tokens(data.source, data.target)
            if t in data.vocab.stoi}


def content_fraction(masked):
    tags = [tag for step in masked for _, tag in step if tag is not None]
    return float(np.mean([t in masking.CONTENT_TAGS for t in tags])) if tags else float("nan")


# -- domain tuning -------------------------------------------------------------------------------


def domain_tune(cfg: RunConfig, data: Data | None = None, model=None):
    """Train the MLM on the equal source/target mixture under ``cfg.strategy``."""
    data = load_data(cfg) if data is None else data
    os.makedirs(cfg.out_dir, exist_ok=True)
    model = initial_model(cfg, data) if model is None else model
    strategy = masking.parse_strategy(cfg.strategy)
    generator = None
    if masking.needs_generator(strategy):
        generator = adversarial.PuzzleGenerator(cfg.hidden_size, stream(cfg.seed, "generator"), cfg.generator_hidden,
                                                cfg.generator_dropout)
    lm_s, lm_t = corpus.domain_unigrams(data.source, data.target)
    table = corpus.density_table(lm_s, lm_t, data.vocab)
    source, target = data.source, data.target
    result = adversarial.train_domain(
        lambda r: corpus.mix_domains(source, target, r), model, strategy, adversarial_config(cfg),
        streams(cfg.seed), generator, density_table=table, keep_masked=True,
        metrics_path=_out(cfg, "metrics.csv"), checkpoint_every=cfg.checkpoint_every, checkpoint_dir=cfg.out_dir,
    )
    mlm.save_model(model, _out(cfg, "mlm.npz"), _out(cfg, "mlm.cfg"))
    if generator is not None:
        nn.save_checkpoint(_out(cfg, "generator.npz"), generator.state_dict())
    series = corpus.masked_density_report(([t for t, _ in step] for step in result.masked), table,
                                          cfg.density_window)
    with open(_out(cfg, "masked_density.csv"), "w") as fh:
        fh.write("window,mean_density_ratio\n")
        fh.writelines(f"{i},{v!r}\n" for i, v in enumerate(series))
    summary = {
        "strategy": cfg.strategy,
        "seed": cfg.seed,
        "steps": cfg.steps,
        "metrics_schema_version": adversarial.METRICS_SCHEMA_VERSION,
        "final_mlm_loss": result.metrics[-1]["mlm_loss"] if result.metrics else None,
        "density_ratio_mean": float(np.mean([m["density_ratio_mean"] for m in result.metrics]))
        if result.metrics else None,
        "content_fraction": content_fraction(result.masked),
        "target_token_nll": target_token_nll(model, data.target_test, target_exclusive_ids(data)),
    }
    with open(_out(cfg, "run.json"), "w") as fh:
        json.dump({"summary": summary, "config": cfg.to_text().splitlines()}, fh, indent=2)
    return model, generator, result, summary


# -- task tuning and evaluation ------------------------------------------------------------------


def finetune(cfg: RunConfig, data: Data | None = None, model=None):
    """Tune the domain-tuned encoder plus a tagging head on labeled source data."""
    data = load_data(cfg) if data is None else data
    if model is None:
        model = mlm.load_model(_need(_out(cfg, "mlm.npz")), _need(_out(cfg, "mlm.cfg")))
    head = taskeval.TaggerHead(model.cfg.hidden_size, stream(cfg.seed, "task"))
    rng = stream(cfg.seed, "task")
    losses = taskeval.finetune_task(model, head, data.source, rng, cfg.task_epochs, cfg.task_batch, cfg.task_lr,
                                    cfg.full_model, dropout_rng=np.random.default_rng(rng.integers(2**63)))
    os.makedirs(cfg.out_dir, exist_ok=True)
    nn.save_checkpoint(_out(cfg, "task-mlm.npz"), model.state_dict())
    nn.save_checkpoint(_out(cfg, "task-head.npz"), head.state_dict())
    return model, head, losses


def evaluate(cfg: RunConfig, data: Data | None = None, model=None, head=None):
    """Zero-shot report on the labeled target split, or a rescoring of ``predictions_file``."""
    if cfg.predictions_file:
        vocab = set()
        if os.path.exists(_data_path(cfg, "source")):
            vocab = {t for s in corpus.read_jsonl(_data_path(cfg, "source")) for t in s.tokens}
        return taskeval.score_predictions_file(_need(cfg.predictions_file), vocab)
    data = load_data(cfg) if data is None else data
    if model is None:
        model = mlm.load_model(_need(_out(cfg, "task-mlm.npz")), _need(_out(cfg, "mlm.cfg")))
    if head is None:
        head = taskeval.TaggerHead(model.cfg.hidden_size, np.random.default_rng(0))
        head.load_state_dict(nn.load_checkpoint(_need(_out(cfg, "task-head.npz"))))
    source_vocab = {t for s in data.source for t in s.tokens}
    os.makedirs(cfg.out_dir, exist_ok=True)
    report = taskeval.evaluate(model, head, data.target_test, source_vocab, _out(cfg, "predictions.txt"))
    with open(_out(cfg, "report.json"), "w") as fh:
        fh.write(report.to_json())
    return report


def compare_strategies(cfg: RunConfig, strategies=("adv", "rand", "pos")):
    """Full run of several strategies from one shared starting model.

    Generates data under ``data_dir`` if missing, pretrains once into
    ``out_dir/pretrained.npz`` (reused when present), then domain-tunes,
    task-tunes and evaluates each strategy in ``out_dir/<strategy>``.
    Returns one summary dict per strategy, with ``f1`` added.
    """
    if not os.path.exists(_data_path(cfg, "manifest")):
        gen_data(cfg)
    data = load_data(cfg)
    start = cfg.init_checkpoint or os.path.join(cfg.out_dir, "pretrained.npz")
    if not os.path.exists(start):
        os.makedirs(cfg.out_dir, exist_ok=True)
        nn.save_checkpoint(start, pretrain(cfg, data).state_dict())
    rows = []
    for name in strategies:
        run = cfg.replace(strategy=name, init_checkpoint=start, out_dir=os.path.join(cfg.out_dir, name))
        _, _, _, summary = domain_tune(run, data)
        model, head, _ = finetune(run, data)
        summary["f1"] = evaluate(run, data, model, head).f1
        summary["run"] = run.out_dir
        rows.append(summary)
    return rows


# -- analysis ------------------------------------------------------------------------------------


ANALYSIS_COLUMNS = ("run", "strategy", "seed", "density_ratio_mean", "content_fraction", "target_token_nll",
                    "f1")


def analyze(cfg: RunConfig):
    """Collect per-run summaries of the directories listed in ``runs`` into ``analysis.csv``."""
    rows = []
    for run in [r.strip() for r in cfg.runs.split(",") if r.strip()]:
        with open(_need(os.path.join(run, "run.json"))) as fh:
            summary = json.load(fh)["summary"]
        f1 = None
        if os.path.exists(os.path.join(run, "report.json")):
            with open(os.path.join(run, "report.json")) as fh:
                f1 = json.load(fh)["f1"]
        rows.append({"run": run, "f1": f1, **{k: summary.get(k) for k in ANALYSIS_COLUMNS[1:6]}})
    if not rows:
        raise MissingArtifactError("no runs given to analyze (set runs = dir1,dir2,...)")
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(_out(cfg, "analysis.csv"), "w") as fh:
        fh.write(",".join(ANALYSIS_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join("" if r[c] is None else str(r[c]) for c in ANALYSIS_COLUMNS) + "\n")
    return rows


def strategy_gaps(rows, metric, a="adv", b="rand"):
    """Mean of ``metric`` per strategy and the difference ``a - b``."""
    means = {}
    for s in (a, b):
        vals = [r[metric] for r in rows if r["strategy"] == s and r[metric] is not None]
        means[s] = float(np.mean(vals)) if vals else float("nan")
    return means, means[a] - means[b]


# -- subset sampler verification -----------------------------------------------------------------


def sample_subsets_check(cfg: RunConfig):
    """Partition, marginal, exactness and chi-square checks of the subset sampler.

    Returns a list of ``(name, passed, detail)``.
    """
    rng = stream(cfg.seed, "masking")
    n, K, draws = cfg.subset_n, cfg.subset_k, cfg.subset_draws
    probs = rng.uniform(0.05, 0.95, n)
    dist = subsets.build_distribution(probs, K)
    support = subsets.enumerate_support(probs, K)
    z_enum = subsets.partition_by_enumeration(probs, K)
    checks = []
    rel = abs(math.exp(dist.log_partition) - z_enum) / z_enum
    checks.append(("partition", rel < 1e-10, f"relative error {rel:.2e}"))
    marg = subsets.inclusion_probabilities(dist)
    enum_marg = np.zeros(n)
    for s, w in support:
        enum_marg[list(s)] += w
    err = float(np.abs(marg - enum_marg).max())
    checks.append(("marginals", err < 1e-10 and abs(marg.sum() - K) < 1e-8, f"max error {err:.2e}"))
    index = {s: i for i, (s, _) in enumerate(support)}
    exact = np.array([w for _, w in support])
    idx, _ = subsets.sample_hard_batch(dist, draws, rng)
    counts = np.bincount([index[tuple(row)] for row in idx], minlength=len(support))
    tv = 0.5 * np.abs(counts / draws - exact).sum()
    checks.append(("total-variation", tv < 0.01, f"TV {tv:.4f} over {draws} draws"))
    emp = np.bincount(idx.ravel(), minlength=n) / draws
    gap = float(np.abs(emp - marg).max())
    checks.append(("empirical-marginals", gap < 0.005, f"max gap {gap:.4f}"))
    p_value = stats.chisquare(counts, exact * draws).pvalue
    checks.append(("chi-square", p_value > 0.001, f"p = {p_value:.4f}"))
    return checks


def relaxed_gradient_check(cfg: RunConfig, h=1e-6):
    """Finite-difference check of the relaxed path log-probability gradient."""
    rng = stream(cfg.seed, "gumbel")
    probs = rng.uniform(0.1, 0.9, cfg.subset_n)
    noise = rng.gumbel(size=(cfg.subset_n, 2))
    drawn = subsets.sample_relaxed(subsets.build_distribution(probs, cfg.subset_k), 1.0, noise=noise)
    numeric = np.zeros_like(probs)
    for i in range(len(probs)):
        up, dn = probs.copy(), probs.copy()
        up[i] += h
        dn[i] -= h
        f = lambda p: subsets.sample_relaxed(subsets.build_distribution(p, cfg.subset_k), 1.0,
                                             noise=noise).relaxed_log_prob
        numeric[i] = (f(up) - f(dn)) / (2 * h)
    scale = max(np.abs(numeric).max(), 1e-12)
    return float(np.abs(drawn.relaxed_grad - numeric).max() / scale)

