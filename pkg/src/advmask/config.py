"""Run configuration and seeded random streams.

A config file is plain text, one ``key = value`` per line; ``#`` starts a
comment.  Unknown keys are rejected.  Booleans are ``true``/``false``.
Command-line ``--set key=value`` overrides win over the file.
"""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass, fields

import numpy as np

from . import masking


class ConfigError(ValueError):
    pass


# Desk-scale settings: a small encoder that trains in about a minute per
# strategy on one CPU core.  Learning rates are raised to match the small
# model and short step budget.
DESK = dict(
    n_source=1500, n_target=1500, n_target_test=400, n_pool=0,
    hidden_size=32, num_layers=2, num_heads=2, ffn_size=64, max_seq_len=32,
    pretrain_steps=400, pretrain_lr=2e-3, steps=400, lr=1e-3, generator_lr=1e-3, task_lr=1e-3,
)

STREAMS = ("data", "masking", "gumbel", "dropout", "init", "generator", "coin", "pretrain", "task")


@dataclass
class RunConfig:
    # paths
    data_dir: str = "data"
    out_dir: str = "runs/default"
    init_checkpoint: str = ""
    runs: str = ""
    predictions_file: str = ""
    stopwords_file: str = ""
    seed: int = 0
    # synthetic data
    n_source: int = 2000
    n_target: int = 2000
    n_target_test: int = 500
    n_pool: int = 1000
    shared_fraction: float = 0.3
    n_templates: int = 12
    entity_rate: float = 0.3
    n_planted: int = 6
    planted_rate: float = 0.5
    select_top_n: int = 0
    # model
    hidden_size: int = 64
    num_layers: int = 2
    num_heads: int = 2
    ffn_size: int = 256
    max_seq_len: int = 128
    dropout: float = 0.1
    # domain tuning
    strategy: str = "adv"
    mask_ratio: float = 0.15
    beta: float = 0.3
    temperature: float = 1.0
    mc_samples: int = 1
    lr: float = 5e-5
    generator_lr: float = 5e-5
    generator_hidden: int = 256
    generator_dropout: float = 0.1
    batch: int = 32
    steps: int = 1000
    pretrain_steps: int = 0
    pretrain_lr: float = 5e-5
    per_sentence_coin: bool = False
    checkpoint_every: int = 0
    log_wallclock: bool = False
    # task tuning
    task_epochs: int = 3
    task_lr: float = 5e-5
    task_batch: int = 32
    full_model: bool = True
    # analysis and verification
    density_window: int = 2500
    subset_n: int = 8
    subset_k: int = 3
    subset_draws: int = 200_000

    def validate(self):
        try:
            masking.parse_strategy(self.strategy)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta must lie in [0, 1]")
        if not 0.0 < self.mask_ratio <= 1.0:
            raise ConfigError("mask_ratio must lie in (0, 1]")
        if self.temperature <= 0 or self.mc_samples < 1:
            raise ConfigError("temperature must be positive and mc_samples >= 1")
        if self.hidden_size % self.num_heads:
            raise ConfigError("hidden_size must be divisible by num_heads")
        if masking.needs_generator(masking.parse_strategy(self.strategy)) and self.generator_lr <= 0:
            raise ConfigError("adversarial strategies need a positive generator_lr")
        if min(self.batch, self.task_batch) < 1 or min(self.steps, self.pretrain_steps, self.task_epochs) < 0:
            raise ConfigError("batch sizes must be positive and step counts non-negative")
        if not 0 <= self.subset_k <= self.subset_n:
            raise ConfigError("subset_k must lie in [0, subset_n]")
        return self

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, raw):
    kind = _TYPES[key]
    raw = raw.strip()
    try:
        if kind in (bool, "bool"):
            if raw.lower() not in ("true", "false"):
                raise ValueError
            return raw.lower() == "true"
        if kind in (int, "int"):
            return int(raw.replace("_", ""))
        if kind in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_pairs(pairs, where="override"):
    out = {}
    for lineno, line in pairs:
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        key, sep, value = text.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{where}:{lineno}: expected key = value")
        if key not in _TYPES:
            raise ConfigError(f"{where}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(path=None, overrides=()):
    """File values, then overrides (``key=value`` strings); returns a validated config."""
    values = {}
    if path:
        try:
            with open(path) as fh:
                values.update(parse_pairs(enumerate(fh, 1), str(path)))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    values.update(parse_pairs(((i + 1, o) for i, o in enumerate(overrides)), "--set"))
    return RunConfig(**values).validate()


def stream(seed, name):
    """Independent generator for a named stream of a master seed."""
    if name not in STREAMS:
        raise KeyError(f"unknown random stream {name!r}")
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),)))


def streams(seed, names=STREAMS):
    return {name: stream(seed, name) for name in names}
