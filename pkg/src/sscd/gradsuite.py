"""Finite-difference checks over every differentiable operation.

Each registry entry builds ``(fn, inputs)`` from a generator: ``fn`` maps
tensors to a scalar and ``inputs`` are float64 arrays.  Inputs are drawn so
that no element sits near a kink (ReLU at zero, max-pool ties, the
probability clamp) where central differences are meaningless.
"""

import zlib
from dataclasses import dataclass

import numpy as np

from .engine import ops
from .engine.gradcheck import grad_check
from .engine.losses import bce_change_loss, split_semantic_loss
from .engine.tensor import Tensor

TOLERANCE = 1e-3
STEP = 1e-4


def _away_from_zero(rng, shape, gap=0.05):
    x = rng.uniform(gap, 1.0, shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _distinct(rng, shape, gap=0.01):
    # values on a shuffled grid, so maxima win by at least ``gap``
    n = int(np.prod(shape))
    return (rng.permutation(n) * gap - n * gap / 2).reshape(shape)


def _fixed(rng, make_out, *inputs):
    # contract the output with fixed random weights so every element matters
    probe = make_out(*[Tensor(a) for a in inputs])
    weights = rng.standard_normal(probe.shape)
    return (lambda *t: ops.sum(ops.mul(make_out(*t), weights))), list(inputs)


def _conv(rng, stride, padding):
    x = rng.standard_normal((2, 3, 6, 6))
    w = rng.standard_normal((4, 3, 3, 3)) * 0.5
    b = rng.standard_normal(4)
    return _fixed(rng, lambda x, w, b: ops.conv2d(x, w, b, stride, padding), x, w, b)


def _bce(rng):
    logits = rng.standard_normal((2, 2, 4, 4))
    target = (rng.random((2, 4, 4)) < 0.5).astype(np.float64)
    return (lambda z: bce_change_loss(z, target)), [logits]


def _semantic(rng):
    k = 3
    logits = rng.standard_normal((2, 2 * k, 4, 4))
    t1 = rng.integers(0, k, (2, 4, 4))
    t2 = rng.integers(0, k, (2, 4, 4))
    return (lambda z: split_semantic_loss(z, t1, t2)), [logits]


def _batch_norm(rng):
    x = rng.standard_normal((3, 2, 3, 3))
    gamma = rng.uniform(0.5, 1.5, 2)
    beta = rng.standard_normal(2)

    def out(x, g, b):
        return ops.batch_norm2d(x, g, b, np.zeros(2), np.ones(2), training=True)

    return _fixed(rng, out, x, gamma, beta)


REGISTRY = {
    "conv2d": lambda rng: _conv(rng, 1, 1),
    "conv2d_stride2": lambda rng: _conv(rng, 2, 1),
    "max_pool2d": lambda rng: _fixed(rng, lambda x: ops.max_pool2d(x, 2), _distinct(rng, (2, 2, 4, 4))),
    "upsample2x_nearest": lambda rng: _fixed(rng, lambda x: ops.upsample2x(x, "nearest"), rng.standard_normal((1, 2, 3, 3))),
    "upsample2x_bilinear": lambda rng: _fixed(rng, lambda x: ops.upsample2x(x, "bilinear"), rng.standard_normal((1, 2, 3, 3))),
    "channel_concat": lambda rng: _fixed(
        rng, ops.channel_concat, rng.standard_normal((2, 2, 3, 3)), rng.standard_normal((2, 3, 3, 3))
    ),
    "channel_slice": lambda rng: _fixed(rng, lambda x: ops.channel_slice(x, 1, 3), rng.standard_normal((2, 4, 3, 3))),
    "channel_softmax": lambda rng: _fixed(rng, ops.channel_softmax, rng.standard_normal((2, 3, 3, 3))),
    "correlation2d": lambda rng: _fixed(
        rng, lambda a, b: ops.correlation2d(a, b, 2), rng.standard_normal((2, 3, 5, 5)), rng.standard_normal((2, 3, 5, 5))
    ),
    "relu": lambda rng: _fixed(rng, ops.relu, _away_from_zero(rng, (2, 3, 3))),
    "add": lambda rng: _fixed(rng, ops.add, rng.standard_normal((2, 3)), rng.standard_normal((2, 3))),
    "mul": lambda rng: _fixed(rng, ops.mul, rng.standard_normal((2, 3)), rng.standard_normal((2, 3))),
    "batch_norm2d": _batch_norm,
    "batch_concat_slice": lambda rng: _fixed(
        rng,
        lambda a, b: ops.batch_slice(ops.batch_concat(a, b), 1, 3),
        rng.standard_normal((2, 2, 3, 3)),
        rng.standard_normal((2, 2, 3, 3)),
    ),
    "bce_change_loss": _bce,
    "split_semantic_loss": _semantic,
}


@dataclass
class CheckResult:
    name: str
    max_rel_error: float  # worst over seeds
    seeds: int
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def run_suite(seeds=5, h=STEP, tolerance=TOLERANCE, registry=None, names=None):
    """Run every registered check over ``seeds`` seeds; one result per operation."""
    registry = REGISTRY if registry is None else registry
    results = []
    for name in names or registry:
        worst = 0.0
        for seed in range(seeds):
            fn, inputs = registry[name](np.random.default_rng([seed, zlib.crc32(name.encode())]))
            worst = max(worst, grad_check(fn, inputs, h))
        results.append(CheckResult(name, worst, seeds, tolerance))
    return results


def format_report(results):
    width = max(len(r.name) for r in results)
    lines = [f"{'operation':<{width}}  max_rel_error  status"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.max_rel_error:13.3e}  {'ok' if r.passed else 'FAIL'}")
    failed = [r.name for r in results if not r.passed]
    lines.append(f"{len(results) - len(failed)}/{len(results)} passed" + (f"; failing: {', '.join(failed)}" if failed else ""))
    return "\n".join(lines)
