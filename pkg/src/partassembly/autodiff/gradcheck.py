"""Finite-difference verification of analytic gradients."""

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    finite: bool = True
    worst: str = ""
    per_input: list = field(default_factory=list)

    @property
    def ok(self):
        return self.finite and self.max_rel_err < self.tol


def _loss_value(fn, arrays):
    tensors = [Tensor(a) for a in arrays]
    out = fn(tensors)
    if out.data.shape != ():
        out = ops.sumall(out)
    return float(out.data)


def grad_check(fn, inputs, step=1e-4, tol=1e-3):
    """Compare analytic gradients of ``fn`` against central differences.

    ``fn`` maps a list of Tensors to a Tensor; non-scalar outputs are summed
    into a scalar loss. Relative error per element is
    |analytic - numeric| / max(|analytic|, |numeric|, 1), so near-zero
    gradients are judged on absolute error. Non-finite values anywhere make
    the report fail regardless of error.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in inputs]
    tensors = [Tensor(a.copy()) for a in arrays]
    with Tape() as tape:
        out = fn(tensors)
        if out.data.shape != ():
            out = ops.sumall(out)
    if not np.isfinite(out.data):
        return GradCheckReport(max_rel_err=float("inf"), tol=tol, finite=False,
                               worst="non-finite forward value")
    tape.backward(out)
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]
    finite = all(np.all(np.isfinite(g)) for g in analytic)

    max_err = 0.0
    worst = ""
    per_input = []
    for k, base in enumerate(arrays):
        numeric = np.zeros_like(base)
        flat = base.reshape(-1)
        num_flat = numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            hi = _loss_value(fn, arrays)
            flat[j] = orig - step
            lo = _loss_value(fn, arrays)
            flat[j] = orig
            num_flat[j] = (hi - lo) / (2.0 * step)
        finite = finite and bool(np.all(np.isfinite(numeric)))
        denom = np.maximum(np.maximum(np.abs(analytic[k]), np.abs(numeric)), 1.0)
        err = np.abs(analytic[k] - numeric) / denom
        worst_here = float(err.max()) if err.size else 0.0
        per_input.append(worst_here)
        if worst_here > max_err:
            max_err = worst_here
            worst = f"input {k}"
    return GradCheckReport(max_rel_err=max_err, tol=tol, finite=finite,
                           worst=worst, per_input=per_input)
