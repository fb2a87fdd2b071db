"""
Reverse-mode gradients over numpy arrays
========================================

Operations on :class:`Tensor` record a graph; ``backward`` sweeps it once
and leaves ``.grad`` on every input.  Here we fit a two-layer network to a
noisy sine and compare one gradient against finite differences.
"""

import numpy as np

from advmask import autodiff as ad
from advmask import nn

rng = np.random.default_rng(0)
x = rng.uniform(-3, 3, size=(128, 1))
y = np.sin(x) + 0.05 * rng.normal(size=x.shape)

fc1, fc2 = nn.Linear(1, 32, rng), nn.Linear(32, 1, rng)
params = fc1.parameters() + fc2.parameters()
opt = nn.Adam(params, lr=1e-2)


def loss_fn():
    pred = fc2(ad.tanh(fc1(ad.Tensor(x))))
    return ad.mean((pred - ad.Tensor(y)) ** 2)


for step in range(500):
    loss = loss_fn()
    opt.zero_grad()
    ad.backward(loss)
    opt.step()
    if step % 100 == 0:
        print(f"step {step:3d}  mse {loss.item():.4f}")

# one coordinate checked by central differences
w = fc1.weight
opt.zero_grad()
ad.backward(loss_fn())
h, i = 1e-6, (0, 3)
old = w.data[i]
w.data[i] = old + h
up = loss_fn().item()
w.data[i] = old - h
dn = loss_fn().item()
w.data[i] = old
print("backprop", w.grad[i], " finite difference", (up - dn) / (2 * h))
