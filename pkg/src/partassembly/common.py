"""Shared training utilities."""

import numpy as np


class DivergenceError(RuntimeError):
    """Raised when a training loss goes non-finite."""


def epoch_order(rng, n):
    return rng.permutation(n)


def write_curve_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def check_finite_loss(value, context):
    if not np.isfinite(value):
        raise DivergenceError(f"{context}: loss became {value!r}")
