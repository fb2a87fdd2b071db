"""Puzzle generator and the alternating minimax trainer.

The MLM minimises masked-token NLL on subsets drawn from the generator's
fixed-size subset distribution; with probability ``beta`` per batch the
generator then takes an ascent step on ``(r - b) * l``, where ``r`` is the
summed NLL of the masked tokens under the freshly updated MLM, ``b`` a
moving-average baseline and ``l`` the relaxed path log-probability of the
drawn subset.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import masking, mlm, nn
from .subsets import ENUMERATION_CAP, SupportTooLargeError, build_distribution, enumerate_support, sample_relaxed

METRICS_COLUMNS = (
    "step", "mlm_loss", "reward_mean", "reward_baseline", "pi_mean", "pi_max", "density_ratio_mean", "wallclock",
)
METRICS_SCHEMA_VERSION = 1


class PuzzleGenerator(nn.Module):
    """Two-layer feed-forward net mapping a hidden state to a selection probability."""

    def __init__(self, hidden_size, rng, ffn_size=256, dropout=0.1):
        self.fc1 = nn.Linear(hidden_size, ffn_size, rng)
        self.fc2 = nn.Linear(ffn_size, 1, rng)
        self.dropout = dropout

    def __call__(self, hidden, rng=None):
        h = ad.tanh(self.fc1(ad.as_tensor(hidden)))
        h = ad.dropout(h, self.dropout, rng, self.training)
        logits = self.fc2(h)
        return ad.sigmoid(logits).reshape(logits.shape[:-1])

    def zero_(self):
        for p in self.parameters():
            p.data[...] = 0.0
        return self


@dataclass
class AdversarialConfig:
    beta: float = 0.3
    mask_ratio: float = 0.15
    mc_samples: int = 1
    temperature: float = 1.0
    lr_mlm: float = 5e-5
    lr_generator: float = 5e-5
    batch_size: int = 32
    max_steps: int = 1000
    baseline_decay: float = 0.99
    per_sentence_coin: bool = False
    clip_norm: float = 1.0
    log_wallclock: bool = False

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be at least 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


class MovingAverageBaseline:
    """Exponential moving average of rewards, seeded by the first observation."""

    def __init__(self, decay=0.99, value=None):
        self.decay = decay
        self.value = value

    def update(self, reward):
        self.value = reward if self.value is None else self.decay * self.value + (1 - self.decay) * reward
        return self.value


def reward(model, mask_plan) -> float:
    """Summed NLL of the masked ground truth under the current model (no gradient)."""
    return float(mlm.plan_nll(model, [mask_plan])[0])


def generator_step(generator, samples, rewards, optimizer, baseline=None):
    """One ascent step on the mean of ``(r - b) * l`` over the given samples.

    ``samples`` carry ``path_log_prob`` tensors tied to the generator's
    parameters.  Rewards are constants.  Returns the baseline used.
    """
    rewards = np.atleast_1d(np.asarray(rewards, dtype=float))
    if isinstance(samples, masking.SampledSubset):
        samples = [samples]
    b = 0.0
    if baseline is not None:
        b = rewards.mean() if baseline.value is None else baseline.value
    terms = []
    for s, r in zip(samples, rewards):
        l = s.path_log_prob
        if not isinstance(l, ad.Tensor) or not l.requires_grad:
            raise masking.WiringError("relaxed path log-probability is detached from the generator")
        terms.append(l * float(b - r))
    loss = terms[0]
    for t in terms[1:]:
        loss = loss + t
    loss = loss * (1.0 / len(terms))
    optimizer.zero_grad()
    ad.backward(loss)
    optimizer.step()
    if baseline is not None:
        baseline.update(float(rewards.mean()))
    return b


@dataclass
class TrainResult:
    metrics: list = field(default_factory=list)
    masked: list = field(default_factory=list)  # per step: list of (token id, tag) over masked positions


class BatchStream:
    """Cycle through ``make_epoch(rng)`` lists in fixed-size batches."""

    def __init__(self, make_epoch, batch_size, rng):
        self.make_epoch = make_epoch
        self.batch_size = batch_size
        self.rng = rng
        self.buffer = []

    def next(self):
        while len(self.buffer) < self.batch_size:
            epoch = list(self.make_epoch(self.rng))
            if not epoch:
                raise ValueError("training stream is empty")
            self.buffer.extend(epoch)
        batch, self.buffer = self.buffer[: self.batch_size], self.buffer[self.batch_size:]
        return batch


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x)) if not isinstance(x, int) else str(x)


def _metrics_line(row):
    return [_fmt(row.get(c)) for c in METRICS_COLUMNS]


def write_metrics(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow(_metrics_line(row))


class MetricsLog:
    """Append-only CSV log, flushed after every row."""

    def __init__(self, path):
        self.fh = open(path, "w", newline="")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(METRICS_COLUMNS)

    def append(self, row):
        self.writer.writerow(_metrics_line(row))
        self.fh.flush()

    def close(self):
        self.fh.close()


def read_metrics(path):
    with open(path, newline="") as fh:
        return [
            {k: (float(v) if v != "" else None) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def train_domain(make_epoch, model, strategy, config: AdversarialConfig, rngs, generator=None,
                 density_table=None, keep_masked=False, metrics_path=None, checkpoint_every=0,
                 checkpoint_dir=None):
    """Strategy-driven MLM training with optional adversarial generator updates.

    ``make_epoch(rng)`` returns the sentences of one pass over the (mixed)
    corpus.  ``rngs`` maps stream names (``data``, ``masking``, ``dropout``,
    ``coin`` and optionally ``gumbel``) to independent generators.  Every strategy gets
    the same number of MLM updates (``config.max_steps``).  With
    ``checkpoint_every > 0`` model (and generator) weights are written to
    ``checkpoint_dir`` as ``step{N}-mlm.npz`` / ``step{N}-gen.npz``.
    """
    uses_generator = masking.needs_generator(strategy)
    if uses_generator and generator is None:
        raise ValueError(f"strategy {strategy.name!r} needs a puzzle generator")
    opt_theta = nn.Adam(model.parameters(), lr=config.lr_mlm, clip_norm=config.clip_norm)
    opt_phi = baseline = None
    if uses_generator:
        opt_phi = nn.Adam(generator.parameters(), lr=config.lr_generator, clip_norm=config.clip_norm)
        baseline = MovingAverageBaseline(config.baseline_decay)
        generator.train()
    stream = BatchStream(make_epoch, config.batch_size, rngs["data"])
    result = TrainResult()
    log = MetricsLog(metrics_path) if metrics_path else None
    start = time.perf_counter()
    model.train()
    try:
        _loop(stream, model, strategy, config, rngs, generator, density_table, keep_masked, opt_theta, opt_phi,
              baseline, result, log, start, checkpoint_every, checkpoint_dir)
    finally:
        if log is not None:
            log.close()
    return result


def _loop(stream, model, strategy, config, rngs, generator, density_table, keep_masked, opt_theta, opt_phi,
          baseline, result, log, start, checkpoint_every, checkpoint_dir):
    uses_generator = generator is not None and masking.needs_generator(strategy)
    V = model.cfg.vocab_size
    for step in range(1, config.max_steps + 1):
        batch = stream.next()
        draws = []
        loss = None
        for _ in range(config.mc_samples):
            plans, samples = masking.plan_batch(strategy, batch, rngs["masking"], V, config.mask_ratio, model,
                                                generator, rngs["dropout"], rngs.get("gumbel"))
            term = mlm.masked_nll_batch(model, plans, rngs["dropout"], "mean")
            loss = term if loss is None else loss + term
            draws.append((plans, samples))
        loss = loss * (1.0 / config.mc_samples)
        if not np.isfinite(loss.item()):
            raise nn.TrainingDivergedError(f"non-finite MLM loss {loss.item()} at step {step}")
        opt_theta.zero_grad()
        ad.backward(loss)
        opt_theta.step()

        row = {"step": step, "mlm_loss": loss.item()}
        if uses_generator:
            # the path log-prob's single parent is the sentence's probability vector
            pis = [s.path_log_prob._parents[0].data for _, ss in draws for s in ss if s is not None]
            if pis:
                pis = np.concatenate(pis)
                row["pi_mean"], row["pi_max"] = float(pis.mean()), float(pis.max())
            if config.per_sentence_coin:
                heads = rngs["coin"].random(len(batch)) < config.beta
            else:
                heads = np.full(len(batch), rngs["coin"].random() < config.beta)
            chosen = [(p, s) for plans, ss in draws for p, s, h in zip(plans, ss, heads) if h and s is not None]
            if chosen:
                r = mlm.plan_nll(model, [p for p, _ in chosen])
                generator_step(generator, [s for _, s in chosen], r, opt_phi, baseline)
                row["reward_mean"] = float(r.mean())
            if baseline.value is not None:
                row["reward_baseline"] = baseline.value
        all_plans = [p for plans, _ in draws for p in plans]
        if density_table is not None:
            toks = np.concatenate([np.asarray(p.ground_truth) for p in all_plans])
            row["density_ratio_mean"] = float(density_table[toks].mean())
        if config.log_wallclock:
            row["wallclock"] = time.perf_counter() - start
        result.metrics.append(row)
        if log is not None:
            log.append(row)
        if checkpoint_every and step % checkpoint_every == 0:
            base = os.path.join(checkpoint_dir, f"step{step}")
            nn.save_checkpoint(base + "-mlm.npz", model.state_dict())
            if uses_generator:
                nn.save_checkpoint(base + "-gen.npz", generator.state_dict())
        if keep_masked:
            masked = []
            for plans, _ in draws:
                for sent, p in zip(batch, plans):
                    tags = getattr(sent, "tags", None)
                    masked.extend((tok, None if tags is None else tags[i]) for tok, i in zip(p.ground_truth, p.subset))
            result.masked.append(masked)


def train_adversarial(make_epoch, model, generator, config: AdversarialConfig, rngs, density_table=None,
                      keep_masked=False):
    """Alternating training with the adversarial strategy."""
    strategy = masking.Adversarial(config.temperature)
    return train_domain(make_epoch, model, strategy, config, rngs, generator, density_table,
                        keep_masked=keep_masked)


def variational_gap(model, generator, sentence, cardinality=None, cap=ENUMERATION_CAP):
    """``(max_S NLL(S), E_q[NLL(S)])`` by enumerating every size-K subset.

    Every selected position is replaced by ``[MASK]`` so the NLL of a subset
    is deterministic.  The maximum always bounds the expectation.
    """
    ids = masking.token_ids(sentence)
    n = len(ids)
    K = masking.mask_count(n) if cardinality is None else cardinality
    if math.comb(n, K) > cap:
        raise SupportTooLargeError(f"C({n}, {K}) exceeds cap {cap}")
    hidden, _ = masking.hidden_states(model, [ids])
    was_training = generator.training
    generator.eval()
    try:
        with ad.no_grad():
            probs = generator(ad.Tensor(hidden[0])).data
    finally:
        generator.train(was_training)
    support = enumerate_support(probs, K, cap)
    plans = []
    for subset, _ in support:
        corrupted = list(ids)
        for i in subset:
            corrupted[i] = mlm.MASK
        plans.append(masking.MaskPlan(subset, (masking.Action.MASK,) * K, tuple(ids[i] for i in subset),
                                      tuple(corrupted), "enum"))
    nll = np.concatenate([mlm.plan_nll(model, plans[i:i + 256]) for i in range(0, len(plans), 256)])
    weights = np.array([w for _, w in support])
    expected = float(weights @ nll)
    top = float(nll.max())
    if top < expected - 1e-9 * max(1.0, abs(top)):
        raise ArithmeticError(f"variational bound violated: max {top} < expectation {expected}")
    return top, expected


def uniform_selection_probs(n):
    """Selection probabilities of a zero-weight generator (all 0.5)."""
    return np.full(n, 0.5)


def selection_probs(generator, model, sentence):
    """Generator probabilities for one sentence in eval mode, as numpy."""
    hidden, _ = masking.hidden_states(model, [sentence])
    was_training = generator.training
    generator.eval()
    try:
        with ad.no_grad():
            return generator(ad.Tensor(hidden[0])).data
    finally:
        generator.train(was_training)


def subset_distribution(generator, model, sentence, mask_ratio=masking.MASK_RATIO):
    probs = selection_probs(generator, model, sentence)
    return build_distribution(probs, masking.mask_count(len(probs), mask_ratio))


def run_bandit(seed, steps=2000, n=8, hidden_size=16, high=5.0, low=1.0, lr=5e-5, temperature=1.0, K=1):
    """Generator-only training against a fixed per-token reconstruction loss.

    Position ``rewarded`` (drawn from the seed) costs ``high`` to reconstruct,
    every other position ``low``; the hidden states are fixed random vectors.
    The reward of a subset is the sum of its tokens' losses, so the optimum
    places the largest selection probability on the rewarded position.
    Returns ``(final_probs, rewarded)``.
    """
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(n, hidden_size))
    rewarded = int(rng.integers(n))
    losses = np.full(n, low)
    losses[rewarded] = high
    gen = PuzzleGenerator(hidden_size, rng)
    opt = nn.Adam(gen.parameters(), lr=lr)
    baseline = MovingAverageBaseline()
    for _ in range(steps):
        pi = gen(ad.Tensor(feats), rng=rng)
        drawn = sample_relaxed(build_distribution(pi.data, K), temperature, rng)
        drawn = dataclasses.replace(drawn, path_log_prob=masking.path_log_prob_tensor(pi, drawn))
        generator_step(gen, drawn, [losses[list(drawn.indices)].sum()], opt, baseline)
    gen.eval()
    with ad.no_grad():
        final = gen(ad.Tensor(feats)).data
    return final, rewarded
