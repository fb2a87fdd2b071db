import json
import subprocess
import sys

import pytest

from advmask import cli

TINY = ["--n-source", "60", "--n-target", "60", "--n-target-test", "20", "--n-pool", "10", "--hidden-size", "16",
        "--num-layers", "1", "--num-heads", "2", "--ffn-size", "32", "--max-seq-len", "32", "--steps", "5",
        "--batch", "8", "--lr", "1e-3", "--generator-lr", "1e-3", "--task-epochs", "1", "--task-batch", "8",
        "--density-window", "40"]


def args(tmp_path, *extra, out="run"):
    return [*TINY, "--data-dir", str(tmp_path / "data"), "--out-dir", str(tmp_path / out), *extra]


def test_subcommands_exist():
    parser = cli.build_parser()
    for name in ("gen-data", "domain-tune", "finetune", "eval", "analyze", "sample-subsets"):
        assert parser.parse_args([name]).command == name


def test_full_command_sequence(tmp_path, capsys):
    assert cli.main(["gen-data", *args(tmp_path)]) == cli.EXIT_OK
    assert json.loads(capsys.readouterr().out)["counts"]["source"] == 60
    assert cli.main(["domain-tune", *args(tmp_path)]) == cli.EXIT_OK
    assert cli.main(["finetune", *args(tmp_path)]) == cli.EXIT_OK
    assert cli.main(["eval", *args(tmp_path)]) == cli.EXIT_OK
    assert "f1" in capsys.readouterr().out
    assert cli.main(["analyze", *args(tmp_path, "--runs", str(tmp_path / "run"), out="an")]) == cli.EXIT_OK
    assert "density_ratio_mean" in capsys.readouterr().out


def test_domain_tune_metrics_bit_identical(tmp_path):
    assert cli.main(["gen-data", *args(tmp_path)]) == 0
    for out in ("a", "b"):
        assert cli.main(["domain-tune", *args(tmp_path, out=out)]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_flags_override_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("beta = 0.1\nseed = 3\n")
    parsed = cli.build_parser().parse_args(["domain-tune", "--config", str(path), "--beta", "0.7"])
    cfg = cli.load_config(parsed.config, cli._overrides(parsed))
    assert cfg.beta == 0.7 and cfg.seed == 3


@pytest.mark.parametrize("argv", [
    ["domain-tune", "--beta", "2"],
    ["domain-tune", "--set", "nope=1"],
    ["gen-data", "--steps", "many"],
    ["gen-data", "--shared-fraction", "1.0", "--n-planted", "3"],
])
def test_config_errors_exit_2(argv, tmp_path, capsys):
    assert cli.main([*argv, "--data-dir", str(tmp_path / "d")]) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_missing_data_exits_3(tmp_path, capsys):
    assert cli.main(["domain-tune", *args(tmp_path)]) == cli.EXIT_DATA
    assert "missing artifact" in capsys.readouterr().err


def test_malformed_predictions_exit_3(tmp_path):
    bad = tmp_path / "p.txt"
    bad.write_text("tok O\n")
    assert cli.main(["eval", "--data-dir", str(tmp_path), "--predictions-file", str(bad)]) == cli.EXIT_DATA


def test_sample_subsets_passes(capsys):
    assert cli.main(["sample-subsets", "--subset-draws", "100000"]) == cli.EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "advmask", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "sample-subsets" in out.stdout
