"""Corpora: JSONL I/O, vocabulary, domain mixing, data selection and shift analytics.

A corpus file holds one JSON object per line::

    {"tokens": ["the", "cat"], "tags": ["DET", "NOUN"], "labels": ["O", "O"], "domain": "source"}

Only ``tokens`` is required.  ``tags`` are coarse part-of-speech tags,
``labels`` are span labels in the B/I/O scheme and ``domain`` is ``source`` or
``target``.
"""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import mlm

LABELS = ("O", "B", "I")
DOMAINS = ("source", "target")


class CorpusParseError(ValueError):
    pass


class SyntheticConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple
    ids: tuple = ()
    tags: tuple | None = None
    labels: tuple | None = None
    domain: str | None = None

    def __len__(self):
        return len(self.tokens)

    def to_json(self):
        out = {"tokens": list(self.tokens)}
        for key in ("tags", "labels"):
            if getattr(self, key) is not None:
                out[key] = list(getattr(self, key))
        if self.domain is not None:
            out["domain"] = self.domain
        return out


# -- JSONL ---------------------------------------------------------------------------------


def _parse_record(line, lineno, path):
    where = f"{path}:{lineno}"
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusParseError(f"{where}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict) or "tokens" not in obj:
        raise CorpusParseError(f"{where}: expected an object with a 'tokens' list")
    tokens = obj["tokens"]
    if not isinstance(tokens, list) or not all(isinstance(t, str) and t and not t.isspace() for t in tokens):
        raise CorpusParseError(f"{where}: 'tokens' must be a list of non-empty strings")
    for key in ("tags", "labels"):
        if key in obj and (not isinstance(obj[key], list) or len(obj[key]) != len(tokens)):
            raise CorpusParseError(f"{where}: '{key}' must be a list as long as 'tokens'")
    if "labels" in obj and any(lab not in LABELS for lab in obj["labels"]):
        raise CorpusParseError(f"{where}: labels must be one of {LABELS}")
    domain = obj.get("domain")
    if domain is not None and domain not in DOMAINS:
        raise CorpusParseError(f"{where}: domain must be one of {DOMAINS}")
    unknown = set(obj) - {"tokens", "tags", "labels", "domain"}
    if unknown:
        raise CorpusParseError(f"{where}: unknown fields {sorted(unknown)}")
    tags = tuple(obj["tags"]) if "tags" in obj else None
    labels = tuple(obj["labels"]) if "labels" in obj else None
    return TokenSequence(tuple(tokens), (), tags, labels, domain)


def read_jsonl(path):
    """Parse a corpus file into ``TokenSequence`` records without ids."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                out.append(_parse_record(line, lineno, path))
    return out


def write_jsonl(path, sequences):
    with open(path, "w") as fh:
        for s in sequences:
            fh.write(json.dumps(s.to_json(), separators=(",", ":")) + "\n")


# -- vocabulary ----------------------------------------------------------------------------


class Vocabulary:
    """Reserved tokens first, then tokens by descending frequency, ties lexicographic."""

    def __init__(self, tokens):
        self.itos = list(mlm.RESERVED) + [t for t in tokens if t not in mlm.RESERVED]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, sequences, min_count=1):
        counts = Counter(t for s in sequences for t in s.tokens)
        ranked = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
        return cls(ranked)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def encode(self, tokens):
        return tuple(self.stoi.get(t, mlm.UNK) for t in tokens)

    def decode(self, ids):
        return tuple(self.itos[i] for i in ids)

    def tokenize(self, sequences):
        return [TokenSequence(s.tokens, self.encode(s.tokens), s.tags, s.labels, s.domain) for s in sequences]

    def save(self, path):
        with open(path, "w") as fh:
            fh.write("\n".join(self.itos[len(mlm.RESERVED):]) + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls([line.rstrip("\n") for line in fh if line.strip()])


def build_vocab_and_tokenize(*paths, min_count=1):
    """Build one vocabulary over all files; returns ``(vocab, [sequences per file])``."""
    corpora = [read_jsonl(p) for p in paths]
    vocab = Vocabulary.build([s for c in corpora for s in c], min_count)
    return vocab, [vocab.tokenize(c) for c in corpora]


# -- mixing and selection ------------------------------------------------------------------


def oversample(items, size, rng):
    """Full copies of ``items`` plus a without-replacement remainder, to ``size`` elements."""
    copies, rest = divmod(size, len(items))
    picked = list(items) * copies + [items[i] for i in rng.choice(len(items), rest, replace=False)]
    return [picked[i] for i in rng.permutation(len(picked))]


def mix_domains(source, target, rng):
    """One epoch of an equal source/target mixture.

    The smaller side is oversampled to the size of the larger; the two sides
    are then emitted in pairs (one of each, order by coin flip), so every
    window is balanced to within one sentence.
    """
    if not source or not target:
        raise ValueError("both domains must be non-empty")
    size = max(len(source), len(target))
    s = oversample(source, size, rng)
    t = oversample(target, size, rng)
    out = []
    for a, b, flip in zip(s, t, rng.random(size) < 0.5):
        out.extend((b, a) if flip else (a, b))
    return out


def ngrams(tokens, n):
    return {tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)}


def ngram_similarity(tokens, reference_sets, max_n=4):
    """Mean over n of the fraction of the sentence's distinct n-grams found in the reference.

    Orders for which the sentence has no n-grams (it is shorter than n) are
    left out of the mean.
    """
    scores = []
    for n in range(1, max_n + 1):
        own = ngrams(tokens, n)
        if own:
            scores.append(len(own & reference_sets[n - 1]) / len(own))
    return float(np.mean(scores)) if scores else 0.0


def ngram_select(pool, reference, top_n, max_n=4):
    """Indices of the ``top_n`` pool sentences most similar to the pooled reference.

    Returns ``(indices, scores)`` with indices ordered by descending score and
    ties kept in pool order.
    """
    if not pool or not reference:
        raise ValueError("pool and reference must be non-empty")
    ref = [set().union(*(ngrams(_tokens(r), n) for r in reference)) for n in range(1, max_n + 1)]
    scores = np.array([ngram_similarity(_tokens(s), ref, max_n) for s in pool])
    if top_n > len(pool):
        warnings.warn(f"top_n={top_n} exceeds pool size {len(pool)}; returning the whole pool", stacklevel=2)
        top_n = len(pool)
    order = np.argsort(-scores, kind="stable")[:top_n]
    return [int(i) for i in order], scores


def _tokens(s):
    return tuple(getattr(s, "tokens", s))


# -- unigram statistics --------------------------------------------------------------------


@dataclass
class UnigramLM:
    """Add-k smoothed unigram model over a fixed vocabulary."""

    counts: Counter
    vocabulary: tuple
    k: float = 0.5
    total: int = field(init=False)

    def __post_init__(self):
        self.total = sum(self.counts[w] for w in self.vocabulary)
        self._norm = self.total + self.k * len(self.vocabulary)

    @classmethod
    def fit(cls, sequences, vocabulary=None, k=0.5):
        counts = Counter(t for s in sequences for t in _tokens(s))
        vocab = tuple(sorted(counts)) if vocabulary is None else tuple(vocabulary)
        return cls(counts, vocab, k)

    def prob(self, token):
        return (self.counts.get(token, 0) + self.k) / self._norm

    def probs(self):
        return np.array([self.prob(w) for w in self.vocabulary])


def domain_unigrams(source, target, k=0.5):
    """Source and target unigram models over the union vocabulary."""
    vocab = sorted({t for s in list(source) + list(target) for t in _tokens(s)})
    return UnigramLM.fit(source, vocab, k), UnigramLM.fit(target, vocab, k)


def density_ratio(lm_source, lm_target, token):
    """``max(1 - p_s(w) / p_t(w), 0)``: how target-specific a token is."""
    return max(1.0 - lm_source.prob(token) / lm_target.prob(token), 0.0)


def density_table(lm_source, lm_target, vocab: Vocabulary):
    """Density ratio per vocabulary id; reserved ids get 0."""
    table = np.zeros(len(vocab))
    for i, tok in enumerate(vocab.itos):
        if i >= len(mlm.RESERVED):
            table[i] = density_ratio(lm_source, lm_target, tok)
    return table


def masked_density_report(step_tokens, table, window=2500):
    """Mean density ratio of masked tokens over consecutive windows of training steps.

    ``step_tokens`` yields, per step, the ids of the masked ground-truth
    tokens.  The last window may be shorter.
    """
    out, acc, count, steps = [], 0.0, 0, 0
    for toks in step_tokens:
        toks = np.asarray(toks, dtype=np.int64)
        acc += table[toks].sum()
        count += toks.size
        steps += 1
        if steps == window:
            out.append(acc / count if count else 0.0)
            acc, count, steps = 0.0, 0, 0
    if steps:
        out.append(acc / count if count else 0.0)
    return out


def vocab_overlap(corpus_a, corpus_b, stopwords=()):
    """Jaccard overlap of the two token-type sets, as a percentage."""
    stop = set(stopwords)
    a = {t for s in corpus_a for t in _tokens(s)} - stop
    b = {t for s in corpus_b for t in _tokens(s)} - stop
    union = a | b
    return 100.0 * len(a & b) / len(union) if union else 100.0


def read_stopwords(path):
    with open(path) as fh:
        return {line.strip() for line in fh if line.strip()}


# -- synthetic domain shift ----------------------------------------------------------------

# Per-domain word count and short name for each coarse category.  Content
# categories are split across latent sentence topics; function words are not.
CATEGORIES = {
    "NOUN": ("nn", 30), "VERB": ("vb", 20), "ADJ": ("jj", 12), "ADV": ("rb", 8), "PRON": ("pr", 6),
    "PROPN": ("np", 24), "DET": ("dt", 4), "ADP": ("in", 6), "CCONJ": ("cc", 2), "PUNCT": ("pu", 2),
}
TOPICAL = frozenset({"NOUN", "VERB", "ADJ", "ADV", "PRON", "PROPN"})


@dataclass
class SyntheticConfig:
    n_source: int = 2000
    n_target: int = 2000
    n_target_test: int = 500
    n_pool: int = 1000
    pool_target_fraction: float = 0.5
    shared_fraction: float = 0.3
    n_templates: int = 12
    n_topics: int = 6
    entity_rate: float = 0.3
    n_planted: int = 6
    planted_rate: float = 0.5
    size_scale: float = 1.0
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.shared_fraction <= 1.0:
            raise SyntheticConfigError("shared_fraction must lie in [0, 1]")
        if self.shared_fraction == 1.0 and self.n_planted > 0:
            raise SyntheticConfigError("planted target-only tokens contradict a fully shared vocabulary")
        for name in ("entity_rate", "planted_rate", "pool_target_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SyntheticConfigError(f"{name} must lie in [0, 1]")
        if min(self.n_source, self.n_target) < 1 or min(self.n_pool, self.n_target_test) < 0 or self.n_templates < 1:
            raise SyntheticConfigError("corpus sizes and template count must be positive")
        if self.n_planted < 0 or self.size_scale <= 0 or self.n_topics < 1:
            raise SyntheticConfigError("n_planted must be >= 0 and size_scale > 0")


@dataclass(frozen=True)
class SyntheticLexicon:
    words: dict  # (domain, category) -> tuple of words
    planted: tuple

    def all_words(self, domain):
        out = {w for (d, _), ws in self.words.items() if d == domain for w in ws}
        return out | set(self.planted) if domain == "target" else out


def _lexicon(cfg):
    words = {}
    for cat, (short, size) in CATEGORIES.items():
        d = max(1, round(size * cfg.size_scale))
        # shared count chosen so the Jaccard overlap of the category equals shared_fraction
        sh = round(2 * d * cfg.shared_fraction / (1 + cfg.shared_fraction))
        shared = [f"{short}{i}" for i in range(sh)]
        words["source", cat] = tuple(shared + [f"s{short}{i}" for i in range(d - sh)])
        words["target", cat] = tuple(shared + [f"t{short}{i}" for i in range(d - sh)])
    return SyntheticLexicon(words, tuple(f"hx{i}" for i in range(cfg.n_planted)))


def _templates(cfg, rng):
    """Abstract slot sequences shared by both domains."""
    out = []
    for _ in range(cfg.n_templates):
        clauses = []
        for _ in range(1 + int(rng.random() < 0.35)):
            clause = ["NP", "VERB"]
            if rng.random() < 0.5:
                clause.append("ADV")
            if rng.random() < 0.7:
                clause.append("NP")
            if rng.random() < 0.5:
                clause += ["ADP", "NP"]
            clauses.append(clause)
        slots = clauses[0]
        for c in clauses[1:]:
            slots = slots + ["CCONJ"] + c
        out.append(tuple(slots) + ("PUNCT",))
    return out


def _realize(template, domain, lex, cfg, rng, plant):
    tokens, tags, labels = [], [], []
    topic = int(rng.integers(cfg.n_topics))

    def emit(cat, label="O"):
        pool = lex.words[domain, cat]
        if cat in TOPICAL and len(pool) >= cfg.n_topics:
            pool = pool[topic::cfg.n_topics]
        tokens.append(pool[int(rng.integers(len(pool)))])
        tags.append(cat)
        labels.append(label)

    noun_slots = []
    for slot in template:
        if slot != "NP":
            emit(slot)
            continue
        u = rng.random()
        if u < cfg.entity_rate:
            emit("PROPN", "B")
            if rng.random() < 0.5:
                emit("PROPN", "I")
        elif u < cfg.entity_rate + 0.15:
            emit("PRON")
        else:
            emit("DET")
            if rng.random() < 0.4:
                emit("ADJ")
            noun_slots.append(len(tokens))
            emit("NOUN")
    if plant and noun_slots and lex.planted and rng.random() < cfg.planted_rate:
        pos = noun_slots[int(rng.integers(len(noun_slots)))]
        tokens[pos] = lex.planted[int(rng.integers(len(lex.planted)))]
    return TokenSequence(tuple(tokens), (), tuple(tags), tuple(labels), domain)


class SyntheticShift(NamedTuple):
    source: list
    target: list
    pool: list
    lexicon: SyntheticLexicon
    target_test: list


def generate_synthetic_shift(cfg: SyntheticConfig, rng=None) -> SyntheticShift:
    """Source corpus, target corpus and an unlabeled mixed pool from one template grammar.

    Both domains share the slot templates and differ in (a) which words fill
    each category, with ``shared_fraction`` the Jaccard overlap of the two
    vocabularies, (b) template frequencies, and (c) target-only planted
    tokens that replace a random noun with a uniformly drawn planted word.
    Each sentence draws a latent topic that restricts its content words to
    one slice of every content category, so content words are predictable
    from the rest of the sentence while planted tokens are not.
    A held-out labeled target split is drawn last.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    lex = _lexicon(cfg)
    templates = _templates(cfg, rng)
    weights = {d: rng.dirichlet(np.ones(len(templates))) for d in DOMAINS}

    def draw(domain, count):
        ts = rng.choice(len(templates), size=count, p=weights[domain])
        return [_realize(templates[t], domain, lex, cfg, rng, domain == "target") for t in ts]

    source = draw("source", cfg.n_source)
    target = draw("target", cfg.n_target)
    n_t = int(round(cfg.n_pool * cfg.pool_target_fraction))
    pool = draw("target", n_t) + draw("source", cfg.n_pool - n_t)
    pool = [TokenSequence(s.tokens, (), s.tags, None, None) for s in (pool[i] for i in rng.permutation(len(pool)))]
    return SyntheticShift(source, target, pool, lex, draw("target", cfg.n_target_test))


def target_exclusive_tokens(source, target):
    """Token types that occur in the target corpus but not in the source corpus."""
    src = {t for s in source for t in _tokens(s)}
    return {t for s in target for t in _tokens(s)} - src


def expected_overlap(cfg: SyntheticConfig):
    """Vocabulary overlap implied by the lexicon when every word is used."""
    lex = _lexicon(cfg)
    a, b = lex.all_words("source"), lex.all_words("target")
    return 100.0 * len(a & b) / len(a | b)

