"""Central-difference gradient verification."""

import numpy as np

from .tensor import Tape, Tensor


def analytic_grads(fn, inputs):
    leaves = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    with Tape() as tape:
        out = fn(*leaves)
    tape.backward(out)
    return [leaf.grad for leaf in leaves]


def numeric_grads(fn, inputs, h=1e-4):
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn(*[Tensor(b) for b in arrays]).data)
            flat[i] = orig - h
            fm = float(fn(*[Tensor(b) for b in arrays]).data)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def grad_check(fn, inputs, h=1e-4):
    """Max relative error between tape gradients and central differences.

    ``fn`` maps tensors to a scalar tensor; ``inputs`` are arrays evaluated
    in float64.  The error per element is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    ana = analytic_grads(fn, inputs)
    num = numeric_grads(fn, inputs, h)
    worst = 0.0
    for a, n in zip(ana, num):
        if a.size == 0:
            continue
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst
