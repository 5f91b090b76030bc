"""Reverse-mode tape machinery.

A ``Tensor`` wraps a float64 numpy array plus an accumulated gradient.
Operations executed while a ``Tape`` is active append backward closures in
forward order; ``Tape.backward`` replays them in exact reverse order, which
is a valid topological order by construction. With no active tape the ops
run forward-only, so evaluation code pays nothing for gradients.

Tapes are tracked per thread: independent tapes (e.g. per-shape evaluation)
may run concurrently, while one training step's tape is single-threaded.
"""

import threading

import numpy as np


class ShapeError(ValueError):
    """Raised when operation inputs have non-conforming shapes."""


class Tensor:
    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, data={self.data!r})"


_LOCAL = threading.local()


def _tape_stack():
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = _LOCAL.stack = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of operations; backward runs in reverse record order."""

    def __init__(self):
        self._records = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self._records)

    def record(self, name, backward):
        self._records.append((name, backward))

    def backward(self, loss):
        """Seed d(loss)/d(loss) = 1 and propagate through every record."""
        if loss.data.shape != ():
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        if not np.isfinite(loss.data):
            raise FloatingPointError(f"non-finite loss {loss.data!r}")
        loss.accumulate(np.ones_like(loss.data))
        for _name, bwd in reversed(self._records):
            bwd()


def assert_finite(tensor, what="tensor"):
    if not np.all(np.isfinite(tensor.data)):
        raise FloatingPointError(f"{what} contains non-finite values")
    if tensor.grad is not None and not np.all(np.isfinite(tensor.grad)):
        raise FloatingPointError(f"{what} gradient contains non-finite values")
