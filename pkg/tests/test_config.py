from pathlib import Path

import numpy as np
import pytest

from advmask import config
from advmask.config import ConfigError, RunConfig, load_config

ROOT = Path(__file__).resolve().parents[1]


def test_text_round_trip(tmp_path):
    cfg = RunConfig(seed=7, beta=0.5, strategy="pos", per_sentence_coin=True, out_dir="runs/x")
    path = tmp_path / "run.cfg"
    path.write_text(cfg.to_text())
    assert load_config(path) == cfg


def test_overrides_win_over_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("beta = 0.1  # comment\n\nsteps = 10\n")
    cfg = load_config(path, ["beta=0.9"])
    assert cfg.beta == 0.9 and cfg.steps == 10


@pytest.mark.parametrize("text,match", [
    ("betta = 0.3\n", "unknown key"),
    ("beta 0.3\n", "expected key = value"),
    ("steps = ten\n", "bad value"),
    ("log_wallclock = yes\n", "bad value"),
    ("beta = 1.5\n", "beta"),
    ("strategy = sometimes\n", "strategy"),
    ("hidden_size = 30\nnum_heads = 4\n", "divisible"),
    ("subset_k = 9\nsubset_n = 8\n", "subset_k"),
])
def test_bad_config_rejected(tmp_path, text, match):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError, match=match):
        load_config(path)


def test_unknown_key_line_number(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("seed = 1\n# fine\nnope = 2\n")
    with pytest.raises(ConfigError, match=":3:"):
        load_config(path)


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")


def test_streams_independent_and_reproducible():
    a = config.stream(3, "masking").random(5)
    np.testing.assert_array_equal(a, config.stream(3, "masking").random(5))
    assert not np.allclose(a, config.stream(3, "gumbel").random(5))
    assert not np.allclose(a, config.stream(4, "masking").random(5))
    with pytest.raises(KeyError):
        config.stream(0, "other")
    assert set(config.streams(0)) == set(config.STREAMS)


def test_shipped_desk_config_matches_preset():
    cfg = load_config(ROOT / "configs" / "desk.cfg")
    for key, value in config.DESK.items():
        assert getattr(cfg, key) == value, key
