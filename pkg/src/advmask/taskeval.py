"""Span tagging head, source-task tuning and zero-shot target evaluation.

Scores are token-level: B and I are the positive classes and O is the
negative class.  Micro-averaged precision, recall and F1 over {B, I} are the
headline numbers; per-tag and macro variants are reported alongside.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import mlm, nn
from .corpus import CorpusParseError

LABELS = ("O", "B", "I")
LABEL_IDS = {lab: i for i, lab in enumerate(LABELS)}
POSITIVE = (LABEL_IDS["B"], LABEL_IDS["I"])


class MissingLabelsError(ValueError):
    pass


class TaggerHead(nn.Module):
    """Linear map from hidden states to three label logits."""

    def __init__(self, hidden_size, rng):
        self.proj = nn.Linear(hidden_size, len(LABELS), rng, init_scale=0.02)

    def __call__(self, hidden):
        return self.proj(hidden)


def label_ids(sentence):
    if sentence.labels is None:
        raise MissingLabelsError("sentence has no span labels")
    return np.array([LABEL_IDS[lab] for lab in sentence.labels])


def _batch_logits(model, head, sentences, rng=None, track_model=True):
    ids, pad = mlm.pad_batch([s.ids for s in sentences])
    if track_model:
        _, hidden = model(ids, pad, rng)
    else:
        with ad.no_grad():
            _, hidden = model(ids, pad, rng)
        hidden = ad.Tensor(hidden.data)
    return head(hidden), pad


def finetune_task(model, head, sentences, rng, epochs=3, batch_size=32, lr=5e-5, full_model=True,
                  dropout_rng=None):
    """Cross-entropy tuning on per-token labels; returns the per-step losses.

    With ``full_model=False`` only the head is updated and the encoder weights
    stay bit-for-bit unchanged.
    """
    targets = [label_ids(s) for s in sentences]
    params = head.parameters() + (model.parameters() if full_model else [])
    opt = nn.Adam(params, lr=lr)
    model.train()
    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(sentences))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            logits, pad = _batch_logits(model, head, [sentences[i] for i in idx], dropout_rng, full_model)
            B, n, _ = logits.shape
            gold = np.zeros((B, n), dtype=np.int64)
            for row, i in enumerate(idx):
                gold[row, : len(targets[i])] = targets[i]
            flat = np.flatnonzero(pad.reshape(-1))
            loss = ad.cross_entropy(logits.reshape(B * n, len(LABELS))[flat], gold.reshape(-1)[flat])
            if not np.isfinite(loss.item()):
                raise nn.TrainingDivergedError("non-finite task loss")
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            losses.append(loss.item())
    model.eval()
    return losses


def predict(model, head, sentences, batch_size=64):
    """Argmax label ids per sentence, eval mode."""
    was_training = model.training
    model.eval()
    out = []
    try:
        with ad.no_grad():
            for start in range(0, len(sentences), batch_size):
                chunk = sentences[start:start + batch_size]
                logits, _ = _batch_logits(model, head, chunk)
                pred = logits.data.argmax(-1)
                out.extend(pred[b, : len(s.ids)] for b, s in enumerate(chunk))
    finally:
        model.train(was_training)
    return out


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    accuracy: float
    oov_accuracy: float
    non_oov_accuracy: float
    n_tokens: int
    n_oov: int
    n_non_oov: int
    support: int
    per_tag: dict = field(default_factory=dict)
    macro_f1: float = 0.0

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def table(self):
        rows = [("precision", self.precision), ("recall", self.recall), ("f1", self.f1),
                ("macro_f1", self.macro_f1), ("accuracy", self.accuracy),
                ("oov_accuracy", self.oov_accuracy), ("non_oov_accuracy", self.non_oov_accuracy)]
        lines = [f"{k:<18}{v:8.2f}" for k, v in rows]
        lines.append(f"{'tokens':<18}{self.n_tokens:8d}  (oov {self.n_oov}, non-oov {self.n_non_oov})")
        for tag, s in self.per_tag.items():
            lines.append(f"{tag + ' p/r/f1':<18}{s['precision']:8.2f}{s['recall']:8.2f}{s['f1']:8.2f}")
        return "\n".join(lines)


def _prf(tp, fp, fn):
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return 100 * p, 100 * r, 100 * f


def score(gold, pred, oov=None) -> EvalReport:
    """Token-level report from flat or per-sentence label-id sequences."""
    gold = np.concatenate([np.atleast_1d(g) for g in gold]).astype(np.int64)
    pred = np.concatenate([np.atleast_1d(p) for p in pred]).astype(np.int64)
    oov = np.zeros(len(gold), bool) if oov is None else np.concatenate([np.atleast_1d(o) for o in oov]).astype(bool)
    if not (len(gold) == len(pred) == len(oov)):
        raise ValueError("gold, pred and oov must have equal length")
    correct = gold == pred
    pos_gold, pos_pred = np.isin(gold, POSITIVE), np.isin(pred, POSITIVE)
    tp = int((correct & pos_gold).sum())
    p, r, f = _prf(tp, int((pos_pred & ~correct).sum()), int((pos_gold & ~correct).sum()))
    per_tag = {}
    for lab in POSITIVE:
        t = int(((gold == lab) & (pred == lab)).sum())
        tp_, tr_, tf_ = _prf(t, int(((pred == lab) & (gold != lab)).sum()), int(((gold == lab) & (pred != lab)).sum()))
        per_tag[LABELS[lab]] = {"precision": tp_, "recall": tr_, "f1": tf_, "support": int((gold == lab).sum())}

    def acc(m):
        return 100.0 * correct[m].mean() if m.any() else 0.0

    return EvalReport(
        precision=p, recall=r, f1=f,
        accuracy=acc(np.ones(len(gold), bool)), oov_accuracy=acc(oov), non_oov_accuracy=acc(~oov),
        n_tokens=len(gold), n_oov=int(oov.sum()), n_non_oov=int((~oov).sum()), support=int(pos_gold.sum()),
        per_tag=per_tag, macro_f1=float(np.mean([s["f1"] for s in per_tag.values()])),
    )


def oov_mask(sentence, source_vocab):
    return np.array([t not in source_vocab for t in sentence.tokens])


def write_predictions(path, sentences, predictions):
    """One ``token gold pred`` line per token, blank line between sentences."""
    with open(path, "w") as fh:
        for s, pred in zip(sentences, predictions):
            gold = s.labels if s.labels is not None else ("O",) * len(s.tokens)
            for tok, g, p in zip(s.tokens, gold, pred):
                fh.write(f"{tok} {g} {LABELS[int(p)]}\n")
            fh.write("\n")


def read_predictions(path):
    """Parse a predictions file into ``[(tokens, gold, pred)]`` per sentence."""
    out, cur = [], ([], [], [])
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                if cur[0]:
                    out.append(cur)
                cur = ([], [], [])
                continue
            if len(parts) != 3 or parts[1] not in LABEL_IDS or parts[2] not in LABEL_IDS:
                raise CorpusParseError(f"{path}:{lineno}: expected 'token gold pred'")
            for col, value in zip(cur, parts):
                col.append(value)
    if cur[0]:
        out.append(cur)
    return out


def score_predictions_file(path, source_vocab):
    """Report recomputed from an emitted predictions file."""
    rows = read_predictions(path)
    gold = [[LABEL_IDS[g] for g in r[1]] for r in rows]
    pred = [[LABEL_IDS[p] for p in r[2]] for r in rows]
    oov = [[t not in source_vocab for t in r[0]] for r in rows]
    return score(gold, pred, oov)


def evaluate(model, head, sentences, source_vocab, predictions_path=None) -> EvalReport:
    """Zero-shot evaluation; OOV means absent from the source training vocabulary."""
    gold = [label_ids(s) for s in sentences]
    pred = predict(model, head, sentences)
    if predictions_path is not None:
        write_predictions(predictions_path, sentences, pred)
    return score(gold, pred, [oov_mask(s, source_vocab) for s in sentences])
