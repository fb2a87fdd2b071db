"""
Domain tuning under three masking strategies
============================================

From one pretrained starting point, the encoder is domain-tuned on the
mixed source/target corpus with random, tag-weighted and adversarial
masking, then tuned on labelled source data and evaluated zero-shot on the
target.  This uses the desk preset (about one minute per strategy) with a
shortened step budget; pass ``--full`` for the preset as is.

    python demos/end_to_end.py [--seed N] [--full]
"""

import argparse
import tempfile

from advmask import config, pipeline
from advmask.config import RunConfig

parser = argparse.ArgumentParser()
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--full", action="store_true")
args = parser.parse_args()

settings = dict(config.DESK)
if not args.full:
    settings.update(n_source=600, n_target=600, n_target_test=200, pretrain_steps=150, steps=150)

with tempfile.TemporaryDirectory() as root:
    cfg = RunConfig(seed=args.seed, data_dir=f"{root}/data", out_dir=f"{root}/runs", **settings)
    rows = pipeline.compare_strategies(cfg, ("rand", "pos", "adv"))

print(f"{'strategy':8s} {'density':>8s} {'content':>8s} {'tgt nll':>8s} {'f1':>7s}")
for r in rows:
    print(f"{r['strategy']:8s} {r['density_ratio_mean']:8.3f} {r['content_fraction']:8.3f} "
          f"{r['target_token_nll']:8.3f} {r['f1']:7.2f}")
