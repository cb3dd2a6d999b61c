"""Adam with bias correction."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState):
    """Apply one Adam update in place.

    ``params`` and ``grads`` are parallel dicts keyed by parameter name; values
    are numpy arrays (params are modified in place).  Raises ``FloatingPointError``
    on a non-finite gradient before touching any parameter.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        mhat = m / c1
        vhat = v / c2
        p -= (state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.dtype, copy=False)
    return params, state


class Adam:
    """Optimizer over named :class:`Tensor` parameters, reading their ``.grad``."""

    def __init__(self, named_params, lr=2e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(named_params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self):
        arrays = {k: t.data for k, t in self.params.items()}
        grads = {k: t.grad for k, t in self.params.items() if t.grad is not None}
        adam_step(arrays, grads, self.state)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None
