"""Command-line entry point: ``advmask <command> [--config FILE] [--key value ...]``.

Commands: gen-data, domain-tune, finetune, eval, analyze, sample-subsets.
Every :class:`~advmask.config.RunConfig` field is also a flag
(``--out-dir runs/adv``, ``--beta 0.5``); flags win over the config file,
and ``--set key=value`` is accepted as well.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 data error (missing or malformed input), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields

from . import corpus, nn, pipeline
from .config import ConfigError, RunConfig, load_config

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

COMMANDS = {
    "gen-data": "generate the synthetic source/target corpora and vocabulary",
    "domain-tune": "continue MLM training on the source/target mixture under a masking strategy",
    "finetune": "tune the domain-tuned encoder and a span-tagging head on labeled source data",
    "eval": "zero-shot evaluation on the labeled target split (or rescore --predictions-file)",
    "analyze": "summarize and compare finished runs (--runs dir1,dir2,...)",
    "sample-subsets": "verify the fixed-size subset sampler against exact enumeration",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="advmask", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key")
        for f in fields(RunConfig):
            p.add_argument("--" + f.name.replace("_", "-"), dest="opt_" + f.name, metavar="VALUE",
                           help=f"default: {f.default}")
    return parser


def _overrides(args):
    out = list(args.set)
    for f in fields(RunConfig):
        value = getattr(args, "opt_" + f.name)
        if value is not None:
            out.append(f"{f.name}={value}")
    return out


def _print_json(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def run(command, cfg: RunConfig):
    if command == "gen-data":
        _print_json(pipeline.gen_data(cfg))
    elif command == "domain-tune":
        _, _, _, summary = pipeline.domain_tune(cfg)
        _print_json(summary)
    elif command == "finetune":
        _, _, losses = pipeline.finetune(cfg)
        print(f"task tuning: {len(losses)} steps, final loss {losses[-1] if losses else float('nan'):.4f}")
    elif command == "eval":
        report = pipeline.evaluate(cfg)
        print(report.table())
    elif command == "analyze":
        rows = pipeline.analyze(cfg)
        for r in rows:
            print("  ".join(f"{k}={r[k]}" for k in pipeline.ANALYSIS_COLUMNS))
        for metric in ("density_ratio_mean", "target_token_nll", "content_fraction", "f1"):
            means, gap = pipeline.strategy_gaps(rows, metric)
            print(f"{metric}: adv {means['adv']:.4f}  rand {means['rand']:.4f}  gap {gap:+.4f}")
    elif command == "sample-subsets":
        checks = pipeline.sample_subsets_check(cfg)
        grad_err = pipeline.relaxed_gradient_check(cfg)
        checks.append(("relaxed-gradient", grad_err < 1e-4, f"relative error {grad_err:.2e}"))
        for name, ok, detail in checks:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        if not all(ok for _, ok, _ in checks):
            return EXIT_VERIFY
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        return run(args.command, cfg)
    except (ConfigError, corpus.SyntheticConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (pipeline.MissingArtifactError, corpus.CorpusParseError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (nn.TrainingDivergedError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except pipeline.VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
