"""Hot numeric kernels: nearest-neighbor search, farthest point sampling,
and z-buffer splatting.

Each kernel has a numba ``@njit`` implementation and a pure-numpy fallback
with identical semantics (including tie-breaking). The active backend is
picked at import time from the ``ASSEMBLY_BACKEND`` environment variable:

    auto   (default) use numba when it imports, else numpy
    numba  require numba, fail loudly if unavailable
    numpy  force the pure-numpy path

``IMPLEMENTATIONS`` keeps every available backend importable so the
benchmark suite can time them side by side.
"""

import math
import os
from types import SimpleNamespace

import numpy as np


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------

def _nearest_sq_numpy(a, b):
    """For each row of a, squared distance and index of its nearest row in b.

    Ties resolve to the lowest index. Blocked so the (n, m) distance matrix
    never exceeds a few tens of MB.
    """
    n = a.shape[0]
    best = np.empty(n, dtype=np.float64)
    idx = np.empty(n, dtype=np.int64)
    block = max(1, 2_000_000 // max(b.shape[0], 1))
    for s in range(0, n, block):
        e = min(n, s + block)
        d = a[s:e, None, :] - b[None, :, :]
        # dx*dx + dy*dy + dz*dz in this exact order, matching the jit loop
        dsq = d[:, :, 0] * d[:, :, 0] + d[:, :, 1] * d[:, :, 1] + d[:, :, 2] * d[:, :, 2]
        j = dsq.argmin(axis=1)
        idx[s:e] = j
        best[s:e] = dsq[np.arange(e - s), j]
    return best, idx


def _fps_numpy(points, k, start):
    """Greedy farthest-point subset of k indices, seeded at index start."""
    n = points.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    dist = np.full(n, np.inf)
    cur = int(start)
    for i in range(k):
        chosen[i] = cur
        d = points - points[cur]
        dsq = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
        np.minimum(dist, dsq, out=dist)
        cur = int(dist.argmax())
    return chosen


def _zbuffer_numpy(points, owner_ids, m, half_extent):
    """Orthographic splat along -z: per pixel keep the point with max z.

    Ties on depth keep the earliest point in input order. Returns an
    (m, m) owner grid (-1 where uncovered) and the winning depth grid.
    """
    owner = np.full((m, m), -1, dtype=np.int64)
    depth = np.full((m, m), -np.inf)
    if points.shape[0] == 0:
        return owner, depth
    scale = m / (2.0 * half_extent)
    u = np.floor((points[:, 0] + half_extent) * scale).astype(np.int64)
    v = np.floor((half_extent - points[:, 1]) * scale).astype(np.int64)
    ok = (u >= 0) & (u < m) & (v >= 0) & (v < m)
    if not ok.any():
        return owner, depth
    u, v = u[ok], v[ok]
    z = points[ok, 2]
    own = owner_ids[ok]
    pix = v * m + u
    rev = -np.arange(z.shape[0])  # later index sorts earlier
    order = np.lexsort((rev, z, pix))
    pix_s = pix[order]
    last = np.nonzero(np.r_[pix_s[1:] != pix_s[:-1], True])[0]
    win = order[last]
    owner.flat[pix[win]] = own[win]
    depth.flat[pix[win]] = z[win]
    return owner, depth


_NUMPY = SimpleNamespace(
    nearest_sq=_nearest_sq_numpy,
    fps=_fps_numpy,
    zbuffer=_zbuffer_numpy,
)

IMPLEMENTATIONS = {"numpy": _NUMPY}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _build_numba():
    from numba import njit

    @njit(cache=True, nogil=True)
    def nearest_sq(a, b):
        n = a.shape[0]
        m = b.shape[0]
        best = np.empty(n, dtype=np.float64)
        idx = np.empty(n, dtype=np.int64)
        for i in range(n):
            ax, ay, az = a[i, 0], a[i, 1], a[i, 2]
            bd = np.inf
            bi = 0
            for j in range(m):
                dx = ax - b[j, 0]
                dy = ay - b[j, 1]
                dz = az - b[j, 2]
                d = dx * dx + dy * dy + dz * dz
                if d < bd:
                    bd = d
                    bi = j
            best[i] = bd
            idx[i] = bi
        return best, idx

    @njit(cache=True, nogil=True)
    def fps(points, k, start):
        n = points.shape[0]
        chosen = np.empty(k, dtype=np.int64)
        dist = np.full(n, np.inf)
        cur = start
        for i in range(k):
            chosen[i] = cur
            cx, cy, cz = points[cur, 0], points[cur, 1], points[cur, 2]
            far = 0
            fd = -1.0
            for j in range(n):
                dx = points[j, 0] - cx
                dy = points[j, 1] - cy
                dz = points[j, 2] - cz
                d = dx * dx + dy * dy + dz * dz
                if d < dist[j]:
                    dist[j] = d
                if dist[j] > fd:
                    fd = dist[j]
                    far = j
            cur = far
        return chosen

    @njit(cache=True, nogil=True)
    def zbuffer(points, owner_ids, m, half_extent):
        owner = np.full((m, m), -1, dtype=np.int64)
        depth = np.full((m, m), -np.inf)
        scale = m / (2.0 * half_extent)
        for i in range(points.shape[0]):
            u = int(math.floor((points[i, 0] + half_extent) * scale))
            v = int(math.floor((half_extent - points[i, 1]) * scale))
            if u < 0 or u >= m or v < 0 or v >= m:
                continue
            z = points[i, 2]
            if z > depth[v, u]:
                depth[v, u] = z
                owner[v, u] = owner_ids[i]
        return owner, depth

    return SimpleNamespace(nearest_sq=nearest_sq, fps=fps, zbuffer=zbuffer)


_MODE = os.environ.get("ASSEMBLY_BACKEND", "auto").lower()
if _MODE not in ("auto", "numba", "numpy"):
    raise RuntimeError(f"ASSEMBLY_BACKEND must be auto|numba|numpy, got {_MODE!r}")

_ACTIVE = "numpy"
if _MODE in ("auto", "numba"):
    try:
        IMPLEMENTATIONS["numba"] = _build_numba()
        _ACTIVE = "numba"
    except ImportError:
        if _MODE == "numba":
            raise RuntimeError("ASSEMBLY_BACKEND=numba but numba is not importable")

_SELECTED = IMPLEMENTATIONS["numpy"] if _MODE == "numpy" else IMPLEMENTATIONS[_ACTIVE]
if _MODE == "numpy":
    _ACTIVE = "numpy"


def active_backend():
    """Name of the backend serving the module-level kernel functions."""
    return _ACTIVE


def nearest_sq(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3 or b.ndim != 2 or b.shape[1] != 3:
        raise ValueError("nearest_sq expects (n, 3) point arrays")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("nearest_sq expects nonempty point sets")
    return _SELECTED.nearest_sq(a, b)


def fps_indices(points, k, start=0):
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    if k > n:
        raise ValueError(f"cannot sample {k} points from a cloud of {n}")
    if k <= 0:
        raise ValueError("k must be positive")
    if not 0 <= start < n:
        raise ValueError(f"start index {start} out of range for {n} points")
    return _SELECTED.fps(points, int(k), int(start))


def zbuffer(points, owner_ids, m, half_extent):
    points = np.ascontiguousarray(points, dtype=np.float64)
    owner_ids = np.ascontiguousarray(owner_ids, dtype=np.int64)
    if points.shape[0] != owner_ids.shape[0]:
        raise ValueError("points and owner_ids lengths differ")
    return _SELECTED.zbuffer(points, owner_ids, int(m), float(half_extent))
