"""Differentiable operations.

Every op computes its forward value with numpy and, when a tape is active,
records a closure that scatters the output gradient back to its inputs.
Conventions pinned for determinism:

  * float64 everywhere, no implicit broadcasting — shapes must conform
    exactly or the op raises ``ShapeError``;
  * relu subgradient at 0 is 0;
  * max pools route the gradient to the lowest-index argmax on ties;
  * sqrt subgradient at 0 is 0;
  * chamfer treats nearest-neighbor indices as locally constant.
"""

import warnings

import numpy as np

from .. import kernels
from .tensor import ShapeError, Tensor, active_tape


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data):
    """Wrap raw data in a Tensor (gradients may still accumulate into it)."""
    return Tensor(data)


def _check(cond, msg):
    if not cond:
        raise ShapeError(msg)


# -- elementwise arithmetic -------------------------------------------------

def add(a, b):
    _check(a.shape == b.shape, f"add: shapes {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)
    tape = active_tape()
    if tape is not None:
        def bwd():
            if out.grad is not None:
                a.accumulate(out.grad)
                b.accumulate(out.grad)
        tape.record("add", bwd)
    return out


def sub(a, b):
    _check(a.shape == b.shape, f"sub: shapes {a.shape} vs {b.shape}")
    out = Tensor(a.data - b.data)
    tape = active_tape()
    if tape is not None:
        def bwd():
            if out.grad is not None:
                a.accumulate(out.grad)
                b.accumulate(-out.grad)
        tape.record("sub", bwd)
    return out


def mul(a, b):
    _check(a.shape == b.shape, f"mul: shapes {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)
    tape = active_tape()
    if tape is not None:
        def bwd():
            if out.grad is not None:
                a.accumulate(out.grad * b.data)
                b.accumulate(out.grad * a.data)
        tape.record("mul", bwd)
    return out


def div(a, b):
    _check(a.shape == b.shape, f"div: shapes {a.shape} vs {b.shape}")
    out = Tensor(a.data / b.data)
    tape = active_tape()
    if tape is not None:
        def bwd():
            if out.grad is not None:
                a.accumulate(out.grad / b.data)
                b.accumulate(-out.grad * a.data / (b.data * b.data))
        tape.record("div", bwd)
    return out


def scale(a, c):
    c = float(c)
    out = Tensor(a.data * c)
    tape = active_tape()
    if tape is not None:
        def bwd():
            if out.grad is not None:
                a.accumulate(out.grad * c)
        tape.record("scale", bwd)
    return out


def add_scalar(a, c):
    c = float(c)
    out = Tensor(a.data + c)
    tape = active_tape()
    if tape is not None:
        def bwd():
            if out.grad is not None:
                a.accumulate(out.grad)
        tape.record("add_scalar", bwd)
    return out


def relu(x):
    out = Tensor(np.maximum(x.data, 0.0))
    tape = active_tape()
    if tape is not None:
        mask = x.data > 0.0
        def bwd():
            if out.grad is not None:
                x.accumulate(out.grad * mask)
        tape.record("relu", bwd)
    return out


def sqrt(x):
    if np.any(x.data < 0.0):
        raise ValueError("sqrt of negative value")
    out = Tensor(np.sqrt(x.data))
    tape = active_tape()
    if tape is not None:
        def bwd():
            if out.grad is not None:
                safe = np.where(out.data > 0.0, out.data, 1.0)
                x.accumulate(np.where(out.data > 0.0, out.grad * 0.5 / safe, 0.0))
        tape.record("sqrt", bwd)
    return out


def sumall(x):
    out = Tensor(x.data.sum())
    tape = active_tape()
    if tape is not None:
        def bwd():
            if out.grad is not None:
                x.accumulate(np.full_like(x.data, float(out.grad)))
        tape.record("sumall", bwd)
    return out


# -- linear layers ----------------------------------------------------------

def linear(x, w, b):
    """y = W x + b for a 1-D feature vector."""
    _check(x.data.ndim == 1, f"linear: x must be 1-D, got {x.shape}")
    _check(w.data.ndim == 2, f"linear: W must be 2-D, got {w.shape}")
    _check(
        w.shape[1] == x.shape[0] and b.shape == (w.shape[0],),
        f"linear: W {w.shape} x {x.shape} b {b.shape} do not conform",
    )
    out = Tensor(w.data @ x.data + b.data)
    tape = active_tape()
    if tape is not None:
        def bwd():
            if out.grad is not None:
                g = out.grad
                x.accumulate(w.data.T @ g)
                w.accumulate(np.outer(g, x.data))
                b.accumulate(g)
        tape.record("linear", bwd)
    return out


def linear_rows(x, w, b):
    """Shared affine map over rows: Y = X W^T + b, X is (n, k).

    The forward pass uses einsum rather than BLAS: each output element is
    then a fixed-order reduction, so a row's result does not depend on its
    position in the batch (required for exact permutation equivariance of
    the part networks; small BLAS kernels break that in the last ulp).
    """
    _check(x.data.ndim == 2, f"linear_rows: X must be 2-D, got {x.shape}")
    _check(
        w.data.ndim == 2 and w.shape[1] == x.shape[1] and b.shape == (w.shape[0],),
        f"linear_rows: W {w.shape} X {x.shape} b {b.shape} do not conform",
    )
    out = Tensor(np.einsum("nk,ok->no", x.data, w.data) + b.data)
    tape = active_tape()
    if tape is not None:
        def bwd():
            if out.grad is not None:
                g = out.grad
                x.accumulate(g @ w.data)
                w.accumulate(g.T @ x.data)
                b.accumulate(g.sum(axis=0))
        tape.record("linear_rows", bwd)
    return out


# -- shape plumbing ---------------------------------------------------------

def concat(xs):
    """Concatenate 1-D tensors in list order."""
    _check(len(xs) > 0, "concat: empty list")
    for x in xs:
        _check(x.data.ndim == 1, f"concat: inputs must be 1-D, got {x.shape}")
    out = Tensor(np.concatenate([x.data for x in xs]))
    tape = active_tape()
    if tape is not None:
        sizes = [x.shape[0] for x in xs]
        def bwd():
            if out.grad is not None:
                off = 0
                for x, n in zip(xs, sizes):
                    x.accumulate(out.grad[off:off + n])
                    off += n
        tape.record("concat", bwd)
    return out


def flatten(x):
    out = Tensor(x.data.reshape(-1))
    tape = active_tape()
    if tape is not None:
        shape = x.data.shape
        def bwd():
            if out.grad is not None:
                x.accumulate(out.grad.reshape(shape))
        tape.record("flatten", bwd)
    return out


def stack_rows(xs):
    """Stack 1-D tensors into a (k, n) matrix."""
    _check(len(xs) > 0, "stack_rows: empty list")
    n = xs[0].shape[0]
    for x in xs:
        _check(x.shape == (n,), "stack_rows: inputs must share length")
    out = Tensor(np.stack([x.data for x in xs]))
    tape = active_tape()
    if tape is not None:
        def bwd():
            if out.grad is not None:
                for i, x in enumerate(xs):
                    x.accumulate(out.grad[i])
        tape.record("stack_rows", bwd)
    return out


def vstack(xs):
    """Concatenate 2-D tensors along axis 0."""
    _check(len(xs) > 0, "vstack: empty list")
    cols = xs[0].shape[1]
    for x in xs:
        _check(x.data.ndim == 2 and x.shape[1] == cols, "vstack: column counts differ")
    out = Tensor(np.concatenate([x.data for x in xs], axis=0))
    tape = active_tape()
    if tape is not None:
        sizes = [x.shape[0] for x in xs]
        def bwd():
            if out.grad is not None:
                off = 0
                for x, n in zip(xs, sizes):
                    x.accumulate(out.grad[off:off + n])
                    off += n
        tape.record("vstack", bwd)
    return out


def hconcat(xs):
    """Concatenate 2-D tensors along axis 1 (same row count)."""
    _check(len(xs) > 0, "hconcat: empty list")
    rows = xs[0].shape[0]
    for x in xs:
        _check(x.data.ndim == 2 and x.shape[0] == rows, "hconcat: row counts differ")
    out = Tensor(np.concatenate([x.data for x in xs], axis=1))
    tape = active_tape()
    if tape is not None:
        sizes = [x.shape[1] for x in xs]
        def bwd():
            if out.grad is not None:
                off = 0
                for x, n in zip(xs, sizes):
                    x.accumulate(out.grad[:, off:off + n])
                    off += n
        tape.record("hconcat", bwd)
    return out


def gather_rows(x, indices):
    """Select rows of a 2-D tensor; backward scatter-adds."""
    _check(x.data.ndim == 2, f"gather_rows: X must be 2-D, got {x.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    out = Tensor(x.data[idx])
    tape = active_tape()
    if tape is not None:
        def bwd():
            if out.grad is not None:
                g = np.zeros_like(x.data)
                np.add.at(g, idx, out.grad)
                x.accumulate(g)
        tape.record("gather_rows", bwd)
    return out


def row(x, i):
    """Single row of a 2-D tensor as a 1-D tensor."""
    _check(x.data.ndim == 2, f"row: X must be 2-D, got {x.shape}")
    i = int(i)
    out = Tensor(x.data[i])
    tape = active_tape()
    if tape is not None:
        def bwd():
            if out.grad is not None:
                g = np.zeros_like(x.data)
                g[i] = out.grad
                x.accumulate(g)
        tape.record("row", bwd)
    return out


# -- pooling ----------------------------------------------------------------

def set_max_pool(xs):
    """Elementwise max over a set of same-length vectors.

    Backward routes each channel's gradient to the argmax element; ties go
    to the lowest list index.
    """
    _check(len(xs) > 0, "set_max_pool: empty list")
    n = xs[0].shape[0]
    for x in xs:
        _check(x.shape == (n,), "set_max_pool: inputs must share length")
    stacked = np.stack([x.data for x in xs])
    arg = stacked.argmax(axis=0)  # first occurrence wins ties
    out = Tensor(stacked[arg, np.arange(n)])
    tape = active_tape()
    if tape is not None:
        def bwd():
            if out.grad is not None:
                for i, x in enumerate(xs):
                    sel = arg == i
                    if sel.any():
                        g = np.zeros_like(x.data)
                        g[sel] = out.grad[sel]
                        x.accumulate(g)
        tape.record("set_max_pool", bwd)
    return out


def set_mean_pool(xs):
    """Elementwise arithmetic mean; backward distributes 1/k uniformly."""
    _check(len(xs) > 0, "set_mean_pool: empty list")
    n = xs[0].shape[0]
    for x in xs:
        _check(x.shape == (n,), "set_mean_pool: inputs must share length")
    k = len(xs)
    out = Tensor(sum(x.data for x in xs) / k)
    tape = active_tape()
    if tape is not None:
        def bwd():
            if out.grad is not None:
                share = out.grad / k
                for x in xs:
                    x.accumulate(share)
        tape.record("set_mean_pool", bwd)
    return out


def max_over_rows(x):
    """Columnwise max of a 2-D tensor (ties to the lowest row index)."""
    _check(x.data.ndim == 2 and x.shape[0] > 0, f"max_over_rows: bad shape {x.shape}")
    arg = x.data.argmax(axis=0)
    cols = np.arange(x.shape[1])
    out = Tensor(x.data[arg, cols])
    tape = active_tape()
    if tape is not None:
        def bwd():
            if out.grad is not None:
                g = np.zeros_like(x.data)
                g[arg, cols] = out.grad
                x.accumulate(g)
        tape.record("max_over_rows", bwd)
    return out


def mean_rows(x):
    """Columnwise mean of a 2-D tensor."""
    _check(x.data.ndim == 2 and x.shape[0] > 0, f"mean_rows: bad shape {x.shape}")
    n = x.shape[0]
    out = Tensor(x.data.mean(axis=0))
    tape = active_tape()
    if tape is not None:
        def bwd():
            if out.grad is not None:
                x.accumulate(np.tile(out.grad / n, (n, 1)))
        tape.record("mean_rows", bwd)
    return out


# -- softmax across a set ---------------------------------------------------

def softmax_over_set(xs):
    """Per-position softmax across a list of same-shape tensors.

    At every position the outputs across the list are positive and sum to 1;
    stabilized by max subtraction so huge logits do not overflow. The
    denominator sums the exponentials in sorted order, so the outputs are
    bit-identical under any permutation of the input list.
    """
    _check(len(xs) > 0, "softmax_over_set: empty list")
    shape = xs[0].shape
    for x in xs:
        _check(x.shape == shape, "softmax_over_set: inputs must share shape")
    z = np.stack([x.data for x in xs])
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    s = e / np.sort(e, axis=0).sum(axis=0, keepdims=True)
    outs = [Tensor(s[i]) for i in range(len(xs))]
    tape = active_tape()
    if tape is not None:
        def bwd():
            g = np.stack([
                o.grad if o.grad is not None else np.zeros(shape) for o in outs
            ])
            dot = (g * s).sum(axis=0, keepdims=True)
            dz = s * (g - dot)
            for x, gi in zip(xs, dz):
                x.accumulate(gi)
        tape.record("softmax_over_set", bwd)
    return outs


# -- geometry ops -----------------------------------------------------------

def l2_normalize(q, fallback=(1.0, 0.0, 0.0, 0.0)):
    """Normalize a vector to unit L2 norm.

    A (near-)zero input cannot be normalized; it is replaced by the fixed
    fallback direction with zero gradient, and a warning is emitted.
    """
    _check(q.data.ndim == 1, f"l2_normalize: need 1-D, got {q.shape}")
    norm = float(np.linalg.norm(q.data))
    if norm < 1e-12:
        warnings.warn("l2_normalize: zero-norm input, substituting fallback", RuntimeWarning)
        fb = np.asarray(fallback, dtype=np.float64)
        _check(fb.shape == q.shape, "l2_normalize: fallback shape mismatch")
        return Tensor(fb.copy())
    out = Tensor(q.data / norm)
    tape = active_tape()
    if tape is not None:
        def bwd():
            if out.grad is not None:
                g = out.grad
                q.accumulate(g / norm - out.data * float(out.data @ g) / norm)
        tape.record("l2_normalize", bwd)
    return out


def _quat_to_matrix_data(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _quat_matrix_partials(q):
    w, x, y, z = q
    dw = 2 * np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    dx = 2 * np.array([[0.0, y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    dy = 2 * np.array([[-2 * y, x, w], [x, 0.0, z], [-w, z, -2 * y]])
    dz = 2 * np.array([[-2 * z, -w, x], [w, -2 * z, y], [x, y, 0.0]])
    return dw, dx, dy, dz


def rotate_points(q, points):
    """Rotate an (n, 3) point tensor by a unit quaternion (w, x, y, z).

    The rotation matrix is the standard unit-quaternion form; gradients flow
    to both the quaternion and the points.
    """
    _check(q.shape == (4,), f"rotate_points: quaternion must be (4,), got {q.shape}")
    _check(points.data.ndim == 2 and points.shape[1] == 3,
           f"rotate_points: points must be (n, 3), got {points.shape}")
    rot = _quat_to_matrix_data(q.data)
    out = Tensor(points.data @ rot.T)
    tape = active_tape()
    if tape is not None:
        def bwd():
            if out.grad is not None:
                g = out.grad
                points.accumulate(g @ rot)
                d_rot = g.T @ points.data
                partials = _quat_matrix_partials(q.data)
                q.accumulate(np.array([float((p * d_rot).sum()) for p in partials]))
        tape.record("rotate_points", bwd)
    return out


def translate_rows(x, t):
    """Add a 3-vector to every row of an (n, 3) tensor."""
    _check(x.data.ndim == 2 and x.shape[1] == t.shape[0] and t.data.ndim == 1,
           f"translate_rows: shapes {x.shape} vs {t.shape}")
    out = Tensor(x.data + t.data)
    tape = active_tape()
    if tape is not None:
        def bwd():
            if out.grad is not None:
                x.accumulate(out.grad)
                t.accumulate(out.grad.sum(axis=0))
        tape.record("translate_rows", bwd)
    return out


def chamfer_sq_pair(a, b):
    """Squared chamfer distance between two point tensors.

    (1/|A|) sum_a min_b ||a-b||^2 + (1/|B|) sum_b min_a ||a-b||^2.
    Nearest-neighbor assignments are treated as locally constant in the
    backward pass.
    """
    _check(a.data.ndim == 2 and a.shape[1] == 3, f"chamfer: A must be (n, 3), got {a.shape}")
    _check(b.data.ndim == 2 and b.shape[1] == 3, f"chamfer: B must be (n, 3), got {b.shape}")
    da, ia = kernels.nearest_sq(a.data, b.data)
    db, ib = kernels.nearest_sq(b.data, a.data)
    na, nb = a.shape[0], b.shape[0]
    out = Tensor(da.sum() / na + db.sum() / nb)
    tape = active_tape()
    if tape is not None:
        def bwd():
            if out.grad is not None:
                g = float(out.grad)
                diff_a = a.data - b.data[ia]
                ga = (2.0 * g / na) * diff_a
                gb = np.zeros_like(b.data)
                np.add.at(gb, ia, -(2.0 * g / na) * diff_a)
                diff_b = b.data - a.data[ib]
                gb += (2.0 * g / nb) * diff_b
                np.add.at(ga, ib, -(2.0 * g / nb) * diff_b)
                a.accumulate(ga)
                b.accumulate(gb)
        tape.record("chamfer_sq_pair", bwd)
    return out
