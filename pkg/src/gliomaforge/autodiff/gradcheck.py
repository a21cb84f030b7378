"""Finite-difference gradient verification.

Runs the graph in float64 and compares analytic gradients against
central differences. Errors are normalized by the largest gradient
magnitude so near-zero components do not blow up the ratio.
"""

import numpy as np

from .tensor import Tensor


def numeric_grad(fn, arrays, index, step=1e-5):
    """Central-difference gradient of fn w.r.t. arrays[index].

    fn maps a list of float64 ndarrays to a float scalar.
    """
    base = [np.array(a, dtype=np.float64) for a in arrays]
    grad = np.zeros_like(base[index])
    flat = base[index].reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        up = fn(base)
        flat[i] = keep - step
        down = fn(base)
        flat[i] = keep
        out[i] = (up - down) / (2.0 * step)
    return grad


def gradcheck(build, arrays, step=1e-5, tol=1e-4):
    """Check analytic vs numeric gradients for every input array.

    build maps a list of Tensors to a scalar Tensor. Returns the worst
    relative error observed; raises AssertionError above tol.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    loss = build(leaves)
    loss.backward()

    def run(values):
        return build([Tensor(v) for v in values]).item()

    worst = 0.0
    for i, leaf in enumerate(leaves):
        numeric = numeric_grad(run, arrays, i, step=step)
        analytic = leaf.grad
        scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
        err = float(np.max(np.abs(analytic - numeric)) / scale)
        worst = max(worst, err)
    if worst >= tol:
        raise AssertionError(f"gradient check failed: rel err {worst:.3e} >= {tol:.1e}")
    return worst
