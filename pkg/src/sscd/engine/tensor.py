"""Tensor and tape for reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` of the
current thread when at least one input requires a gradient.  Outside a tape
every op runs as plain inference.
"""

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_FLOAT_TYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """N-dimensional float array with an optional gradient slot.

    ``node`` is the index of the tape record that produced the tensor, or
    ``None`` for leaves and untracked results.
    """

    __slots__ = ("data", "grad", "requires_grad", "node", "tape", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.type not in _FLOAT_TYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node = None
        self.tape = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # arithmetic sugar; implementations live in ops
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __sub__(self, other):
        from . import ops

        return ops.add(self, ops.mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def sum(self):
        from . import ops

        return ops.sum(self)


@dataclass
class Record:
    inputs: tuple
    output: Tensor
    backward: Callable


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; nested tapes shadow outer ones.  A tape keeps
    its records after :meth:`backward`, so the same graph can be replayed.
    """

    _local = threading.local()

    def __init__(self):
        self.records: list[Record] = []
        self.leaves: dict[int, Tensor] = {}

    def __enter__(self):
        stack = getattr(self._local, "stack", None)
        if stack is None:
            stack = self._local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        self._local.stack.pop()
        return False

    def __len__(self):
        return len(self.records)

    @classmethod
    def current(cls):
        stack = getattr(cls._local, "stack", None)
        return stack[-1] if stack else None

    def record(self, inputs: Sequence[Tensor], output: Tensor, backward: Callable):
        for t in inputs:
            if t.requires_grad and t.node is None:
                self.leaves.setdefault(id(t), t)
        output.requires_grad = True
        output.node = len(self.records)
        output.tape = self
        self.records.append(Record(tuple(inputs), output, backward))

    def clear(self):
        """Drop every record so the activations can be freed right away.

        Recorded outputs point back at the tape, and that cycle would otherwise
        wait for the cyclic garbage collector, which does not see array sizes.
        """
        for rec in self.records:
            rec.output.tape = rec.output.node = None
        self.records.clear()
        self.leaves.clear()

    def backward(self, loss: Tensor):
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape is not self or loss.node is None:
            raise ValueError("loss was not produced on this tape")
        grads = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records[: loss.node + 1]):
            g = grads.get(id(rec.output))
            if g is None:
                continue
            in_grads = rec.backward(g)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
        for key, leaf in self.leaves.items():
            g = grads.get(key)
            leaf.grad = np.zeros_like(leaf.data) if g is None else g.astype(leaf.data.dtype, copy=False)


def track(out_data, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap an op result and record it on the active tape if needed."""
    out = Tensor(out_data, dtype=np.asarray(out_data).dtype)
    tape = Tape.current()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(inputs, out, backward)
    return out


def backward(loss: Tensor):
    """Populate ``.grad`` on every leaf of the tape that produced ``loss``."""
    if loss.tape is None:
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        raise ValueError("loss is not on a tape; build it inside `with Tape():`")
    loss.tape.backward(loss)
