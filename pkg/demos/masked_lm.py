"""
A tiny masked language model
============================

Sentences follow a fixed successor rule, so a masked token can be read off
its left neighbour.  A two-layer encoder learns the rule within a few
hundred steps; the per-position entropy shows where it is still unsure.
"""

import numpy as np

from advmask import autodiff as ad
from advmask import masking, mlm, nn

V = 24
rng = np.random.default_rng(0)
cfg = mlm.MlmConfig(vocab_size=V, hidden_size=32, num_layers=2, num_heads=2, ffn_size=64, max_seq_len=16,
                    dropout=0.0)
model = mlm.MaskedLM(cfg, rng)
opt = nn.Adam(model.parameters(), lr=3e-3)


def sentence():
    # token t is always followed by t + 1 (wrapping inside the content ids)
    start = int(rng.integers(4, V))
    return [4 + (start - 4 + k) % (V - 4) for k in range(8)]


for step in range(300):
    batch = [sentence() for _ in range(32)]
    plans = [masking.plan_random(s, 0.15, rng, V) for s in batch]
    loss = mlm.masked_nll_batch(model, plans, rng)
    opt.zero_grad()
    ad.backward(loss)
    opt.step()
    if step % 50 == 0:
        print(f"step {step:3d}  masked nll {loss.item():.3f}")

s = sentence()
probe = list(s)
probe[3] = mlm.MASK
logits, _ = mlm.forward(model, probe)
print("sentence", s, "masked position 3, predicted", int(logits[3].argmax()))
print("entropy per position", np.round(mlm.position_entropies(model, s), 3))
