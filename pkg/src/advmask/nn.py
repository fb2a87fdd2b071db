"""Parameter containers, a few layers, optimizers and checkpoint I/O."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class TrainingDivergedError(FloatingPointError):
    pass


def parameter(data, name=None):
    return Tensor(np.asarray(data, dtype=ad.DTYPE), requires_grad=True, name=name)


class Module:
    """Base class; parameters are discovered from attributes."""

    training = True

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for value in vars(self).values():
            items = value if isinstance(value, (list, tuple)) else [value]
            for item in items:
                if isinstance(item, Module):
                    yield from item.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ad.ShapeError(f"{name}: checkpoint shape {value.shape} != {p.shape}")
            p.data = value.astype(ad.DTYPE, copy=True)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True, init_scale=None):
        scale = init_scale if init_scale is not None else 1.0 / np.sqrt(n_in)
        self.weight = parameter(rng.normal(0.0, scale, (n_in, n_out)))
        self.bias = parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x):
        y = ad.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim):
        self.gamma = parameter(np.ones(dim))
        self.beta = parameter(np.zeros(dim))

    def __call__(self, x):
        return ad.layer_norm(x, self.gamma, self.beta)


# -- optimisation ---------------------------------------------------------------------


def clip_grad_norm(params, max_norm):
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    norm = float(np.sqrt(sum(float((g**2).sum()) for g in grads)))
    if max_norm is not None and norm > max_norm:
        for g in grads:
            g *= max_norm / norm
    return norm


def _check_finite(params):
    for p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise TrainingDivergedError(f"non-finite gradient in {p.name or tuple(p.shape)}")


class SGD:
    def __init__(self, params, lr, clip_norm=None):
        self.params = list(params)
        self.lr = lr
        self.clip_norm = clip_norm

    def step(self):
        _check_finite(self.params)
        clip_grad_norm(self.params, self.clip_norm)
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad

    def zero_grad(self):
        for p in self.params:
            p.grad = None


class Adam:
    """Adam with bias correction; moment buffers live on the optimizer."""

    def __init__(self, params, lr=5e-5, betas=(0.9, 0.999), eps=1e-8, clip_norm=1.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        _check_finite(self.params)
        clip_grad_norm(self.params, self.clip_norm)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad**2
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# -- checkpoints ------------------------------------------------------------------------
#
# A checkpoint is an uncompressed ``.npz`` archive: one ``.npy`` member per
# parameter, keyed by its dotted name.  Each member stores dtype, shape and
# the raw little-endian values, so a save/load round trip is bit-exact.


def save_checkpoint(path, state):
    with open(path, "wb") as fh:
        np.savez(fh, **state)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as archive:
        return {name: archive[name] for name in archive.files}
