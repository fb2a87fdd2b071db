import numpy as np

from advmask import autodiff as ad


def numeric_grad(fn, t, h=1e-5):
    g = np.zeros_like(t.data)
    it = np.nditer(t.data, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = t.data[i]
        t.data[i] = old + h
        up = fn().item()
        t.data[i] = old - h
        dn = fn().item()
        t.data[i] = old
        g[i] = (up - dn) / (2 * h)
    return g


def check_grads(fn, inputs, rtol=1e-4, atol=1e-7, h=1e-5):
    """Compare backprop against central differences, relative error per tensor."""
    for t in inputs:
        t.grad = None
    ad.backward(fn())
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        numeric = numeric_grad(fn, t, h)
        scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-12)
        err = np.abs(analytic - numeric).max() / scale
        assert err < rtol or np.allclose(analytic, numeric, atol=atol), (
            f"gradient mismatch for {t.shape}: rel err {err:.3e}"
        )
