"""A small pre-LN transformer encoder trained as a masked language model."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn

PAD, UNK, MASK, CLS = 0, 1, 2, 3
RESERVED = ("[PAD]", "[UNK]", "[MASK]", "[CLS]")
NEG_INF = -1e9


class SequenceTooLongError(ValueError):
    pass


class EmptyMaskError(ValueError):
    pass


@dataclass
class MlmConfig:
    vocab_size: int
    hidden_size: int = 64
    num_layers: int = 2
    num_heads: int = 2
    ffn_size: int = 256
    max_seq_len: int = 128
    dropout: float = 0.1

    def __post_init__(self):
        if self.hidden_size % self.num_heads:
            raise ValueError(f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}")
        if self.vocab_size <= len(RESERVED):
            raise ValueError("vocabulary must contain tokens beyond the reserved ids")

    def to_text(self):
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in dataclasses.fields(self))

    @classmethod
    def from_text(cls, text):
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for line in text.splitlines():
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in kinds:
                raise KeyError(f"unknown MlmConfig key {key!r}")
            values[key] = float(value) if kinds[key] in (float, "float") else int(value)
        return cls(**values)


# BERT-Base dimensions; a named preset, far too large to train here.
BASE_SCALE = dict(hidden_size=768, num_layers=12, num_heads=12, ffn_size=3072, max_seq_len=128)


class EncoderBlock(nn.Module):
    def __init__(self, cfg, rng):
        H, F = cfg.hidden_size, cfg.ffn_size
        self.num_heads = cfg.num_heads
        self.dropout = cfg.dropout
        self.ln1 = nn.LayerNorm(H)
        self.qkv = nn.Linear(H, 3 * H, rng, init_scale=0.02)
        self.proj = nn.Linear(H, H, rng, init_scale=0.02)
        self.ln2 = nn.LayerNorm(H)
        self.ff1 = nn.Linear(H, F, rng, init_scale=0.02)
        self.ff2 = nn.Linear(F, H, rng, init_scale=0.02)

    def __call__(self, x, key_bias, rng):
        B, n, H = x.shape
        h, d = self.num_heads, H // self.num_heads
        train = self.training
        qkv = self.qkv(self.ln1(x)).reshape(B, n, 3, h, d).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = ad.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(d)) + key_bias
        att = ad.dropout(ad.softmax(scores, axis=-1), self.dropout, rng, train)
        ctx = ad.matmul(att, v).transpose(0, 2, 1, 3).reshape(B, n, H)
        x = x + ad.dropout(self.proj(ctx), self.dropout, rng, train)
        ff = self.ff2(ad.gelu(self.ff1(self.ln2(x))))
        return x + ad.dropout(ff, self.dropout, rng, train)


class MaskedLM(nn.Module):
    """Token + learned position embeddings, pre-LN encoder, tied output layer."""

    def __init__(self, cfg: MlmConfig, rng: np.random.Generator):
        self.cfg = cfg
        H = cfg.hidden_size
        self.tok_emb = nn.parameter(rng.normal(0.0, 0.02, (cfg.vocab_size, H)))
        self.pos_emb = nn.parameter(rng.normal(0.0, 0.02, (cfg.max_seq_len, H)))
        self.blocks = [EncoderBlock(cfg, rng) for _ in range(cfg.num_layers)]
        self.ln_f = nn.LayerNorm(H)
        self.out_bias = nn.parameter(np.zeros(cfg.vocab_size))

    def _check(self, ids):
        if ids.shape[1] > self.cfg.max_seq_len:
            raise SequenceTooLongError(f"sequence length {ids.shape[1]} > max_seq_len {self.cfg.max_seq_len}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.cfg.vocab_size):
            raise ValueError(f"token ids outside [0, {self.cfg.vocab_size})")

    def __call__(self, ids, pad_mask=None, rng=None):
        """Batched forward.

        ``ids`` is ``(B, n)``; ``pad_mask`` marks real tokens (True) and keys at
        padded positions are excluded from attention.  Returns tensors
        ``(logits (B, n, V), hidden (B, n, H))``.
        """
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        self._check(ids)
        B, n = ids.shape
        if pad_mask is None:
            pad_mask = np.ones((B, n), dtype=bool)
        key_bias = np.where(pad_mask, 0.0, NEG_INF)[:, None, None, :]
        x = ad.embedding(self.tok_emb, ids) + self.pos_emb[:n]
        x = ad.dropout(x, self.cfg.dropout, rng, self.training)
        for block in self.blocks:
            x = block(x, key_bias, rng)
        hidden = self.ln_f(x)
        logits = ad.matmul(hidden, self.tok_emb.transpose(1, 0)) + self.out_bias
        return logits, hidden


def pad_batch(sequences, pad_id=PAD):
    """Right-pad integer sequences; returns ``(ids, mask)``."""
    width = max(len(s) for s in sequences)
    ids = np.full((len(sequences), width), pad_id, dtype=np.int64)
    mask = np.zeros((len(sequences), width), dtype=bool)
    for i, s in enumerate(sequences):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    return ids, mask


def forward(model: MaskedLM, token_ids):
    """Eval-mode forward on one sentence; returns numpy ``(logits (n, V), hidden (n, H))``."""
    was_training = model.training
    model.eval()
    try:
        with ad.no_grad():
            logits, hidden = model(np.asarray(token_ids)[None])
    finally:
        model.train(was_training)
    return logits.data[0], hidden.data[0]


def _gather_targets(plans, width):
    rows, targets = [], []
    for b, plan in enumerate(plans):
        if len(plan.subset) == 0:
            raise EmptyMaskError("mask plan selects no positions")
        for pos, tok in zip(plan.subset, plan.ground_truth):
            rows.append(b * width + pos)
            targets.append(tok)
    return np.asarray(rows), np.asarray(targets)


def masked_nll_batch(model, plans, rng=None, reduction="mean"):
    """NLL of ground-truth tokens at masked positions only, over a batch of plans.

    ``reduction="mean"`` averages over all masked positions in the batch,
    ``"sum"`` adds them, ``"none"`` returns one summed loss per plan.
    """
    ids, mask = pad_batch([p.corrupted_ids for p in plans])
    logits, _ = model(ids, mask, rng)
    B, n, V = logits.shape
    rows, targets = _gather_targets(plans, n)
    picked = logits.reshape(B * n, V)[rows]
    if reduction != "none":
        return ad.cross_entropy(picked, targets, reduction)
    per_token = ad.cross_entropy(picked, targets, "none").data
    owner = rows // n
    return np.bincount(owner, weights=per_token, minlength=B)


def masked_nll(model, corrupted_ids, mask_plan, reduction="mean"):
    """Masked-token NLL for a single sentence, differentiable in the model parameters."""
    if len(mask_plan.subset) == 0:
        raise EmptyMaskError("mask plan selects no positions")
    if list(mask_plan.corrupted_ids) != list(corrupted_ids):
        mask_plan = dataclasses.replace(mask_plan, corrupted_ids=tuple(corrupted_ids))
    return masked_nll_batch(model, [mask_plan], reduction=reduction)


def plan_nll(model, plans):
    """Per-plan summed NLL under the model in eval mode, without recording a graph."""
    was_training = model.training
    model.eval()
    try:
        with ad.no_grad():
            return masked_nll_batch(model, plans, reduction="none")
    finally:
        model.train(was_training)


def entropies_from_logits(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    return -(np.exp(logp) * logp).sum(axis=-1)


def position_entropies(model, token_ids):
    """Predictive entropy (nats) at every position from one unmasked forward pass."""
    logits, _ = forward(model, token_ids)
    return entropies_from_logits(logits)


def save_model(model, weights_path, config_path):
    nn.save_checkpoint(weights_path, model.state_dict())
    with open(config_path, "w") as fh:
        fh.write(model.cfg.to_text())


def load_model(weights_path, config_path):
    with open(config_path) as fh:
        cfg = MlmConfig.from_text(fh.read())
    model = MaskedLM(cfg, np.random.default_rng(0))
    model.load_state_dict(nn.load_checkpoint(weights_path))
    return model
