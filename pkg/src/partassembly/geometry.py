"""Core 3D primitives: point clouds, quaternion poses, AABBs, PCA
canonicalization, farthest point sampling, chamfer distances, and the
orthographic z-buffer projection that produces ground-truth part masks.

Point clouds are plain (n, 3) float64 arrays. All functions here are pure.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels


# ---------------------------------------------------------------------------
# quaternions (w, x, y, z), unit norm
# ---------------------------------------------------------------------------

def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("cannot normalize zero quaternion")
    return q / n


def quat_canonical(q):
    """Fix the sign ambiguity: w >= 0; if w == 0, first nonzero of xyz > 0."""
    q = np.asarray(q, dtype=np.float64)
    if q[0] < 0.0:
        return -q
    if q[0] == 0.0:
        for c in q[1:]:
            if c != 0.0:
                return q if c > 0.0 else -q
    return q


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(rot):
    """Unit quaternion for a rotation matrix (Shepperd's branch method)."""
    rot = np.asarray(rot, dtype=np.float64)
    tr = rot[0, 0] + rot[1, 1] + rot[2, 2]
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([
            0.25 * s,
            (rot[2, 1] - rot[1, 2]) / s,
            (rot[0, 2] - rot[2, 0]) / s,
            (rot[1, 0] - rot[0, 1]) / s,
        ])
    elif rot[0, 0] >= rot[1, 1] and rot[0, 0] >= rot[2, 2]:
        s = np.sqrt(1.0 + rot[0, 0] - rot[1, 1] - rot[2, 2]) * 2.0
        q = np.array([
            (rot[2, 1] - rot[1, 2]) / s,
            0.25 * s,
            (rot[0, 1] + rot[1, 0]) / s,
            (rot[0, 2] + rot[2, 0]) / s,
        ])
    elif rot[1, 1] >= rot[2, 2]:
        s = np.sqrt(1.0 + rot[1, 1] - rot[0, 0] - rot[2, 2]) * 2.0
        q = np.array([
            (rot[0, 2] - rot[2, 0]) / s,
            (rot[0, 1] + rot[1, 0]) / s,
            0.25 * s,
            (rot[1, 2] + rot[2, 1]) / s,
        ])
    else:
        s = np.sqrt(1.0 + rot[2, 2] - rot[0, 0] - rot[1, 1]) * 2.0
        q = np.array([
            (rot[1, 0] - rot[0, 1]) / s,
            (rot[0, 2] + rot[2, 0]) / s,
            (rot[1, 2] + rot[2, 1]) / s,
            0.25 * s,
        ])
    return quat_canonical(quat_normalize(q))


def random_unit_quaternion(rng):
    v = rng.normal(size=4)
    while np.linalg.norm(v) < 1e-8:
        v = rng.normal(size=4)
    return quat_canonical(v / np.linalg.norm(v))


@dataclass
class PartPose:
    """Rigid transform in camera space: unit quaternion + translation."""
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))


@dataclass
class AABB:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def of_cloud(cls, points):
        points = np.asarray(points, dtype=np.float64)
        return cls(points.min(axis=0), points.max(axis=0))

    @property
    def extents(self):
        return self.hi - self.lo

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.extents))


# ---------------------------------------------------------------------------
# canonicalization and scale
# ---------------------------------------------------------------------------

def _order_axes(eigvals, eigvecs):
    """Descending eigenvalue order; near-ties prefer the world axis at the
    same output slot, which keeps nearly-symmetric bars/boards stable."""
    order = list(np.argsort(eigvals)[::-1])
    vals = eigvals[order]
    scale_ref = max(abs(vals[0]), 1e-12)
    i = 0
    while i < 3:
        j = i + 1
        while j < 3 and abs(vals[i] - vals[j]) <= 1e-9 * scale_ref:
            j += 1
        if j - i > 1:
            group = order[i:j]
            picked = []
            remaining = list(group)
            for slot in range(i, j):
                world = np.zeros(3)
                world[slot] = 1.0
                best = max(remaining, key=lambda c: abs(float(eigvecs[:, c] @ world)))
                picked.append(best)
                remaining.remove(best)
            order[i:j] = picked
        i = j
    return [eigvecs[:, k].copy() for k in order]


def _fix_axis_sign(centered, axis):
    """Point the axis so the point of max |projection| projects positive.

    Ties are broken by lexicographic point order (the greatest point wins),
    a choice that is stable under re-canonicalization: in canonical
    coordinates the positively-projecting member of a tied pair is always
    the lexicographically greater one, so a second pass never flips.
    """
    proj = centered @ axis
    mags = np.abs(proj)
    top = mags.max()
    cand = np.nonzero(mags == top)[0]
    if len(cand) > 1:
        keys = centered[cand]
        cand = cand[np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))]
    if proj[cand[-1]] < 0.0:
        return -axis
    return axis


def pca_canonicalize(cloud):
    """Center a cloud and rotate it into its deterministic PCA frame.

    Returns (canonical cloud, frame, centroid) where the frame rows are the
    principal axes sorted by descending variance; the original points are
    ``canonical @ frame + centroid``. The frame is right-handed; axis signs
    follow the max-|projection| rule. Clouds with fewer than two points get
    the identity frame (centered only).
    """
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.ndim != 2 or cloud.shape[1] != 3:
        raise ValueError(f"expected (n, 3) cloud, got {cloud.shape}")
    centroid = cloud.mean(axis=0) if cloud.shape[0] else np.zeros(3)
    centered = cloud - centroid
    if cloud.shape[0] < 2:
        return centered, np.eye(3), centroid
    cov = centered.T @ centered / cloud.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    axes = _order_axes(eigvals, eigvecs)
    a0 = _fix_axis_sign(centered, axes[0])
    a1 = _fix_axis_sign(centered, axes[1])
    a2 = np.cross(a0, a1)
    frame = np.stack([a0, a1, a2])
    return centered @ frame.T, frame, centroid


def normalize_global_scale(parts):
    """Scale a list of clouds uniformly so the longest AABB diagonal is 1.

    Relative part scales are preserved; the shared scale factor is returned
    alongside the scaled clouds.
    """
    if not parts:
        raise ValueError("normalize_global_scale: empty part list")
    longest = max(AABB.of_cloud(p).diagonal for p in parts)
    if longest <= 0.0:
        raise ValueError("normalize_global_scale: all parts degenerate (zero diagonal)")
    factor = 1.0 / longest
    return [p * factor for p in parts], factor


def fps(points, k, start=0):
    """Greedy farthest-point subset of k points, beginning at index start."""
    points = np.asarray(points, dtype=np.float64)
    idx = kernels.fps_indices(points, k, start)
    return points[idx]


def apply_pose(cloud, pose):
    """Rigidly transform a cloud: R(q) p + t per point."""
    q = np.asarray(pose.rotation, dtype=np.float64)
    if abs(np.linalg.norm(q) - 1.0) > 1e-3:
        raise ValueError(f"quaternion norm {np.linalg.norm(q):.6f} deviates from 1")
    rot = quat_to_matrix(quat_normalize(q))
    return np.asarray(cloud, dtype=np.float64) @ rot.T + pose.translation


# ---------------------------------------------------------------------------
# chamfer distances
# ---------------------------------------------------------------------------

def chamfer_sq(a, b):
    """(1/|A|) sum min ||.||^2 + (1/|B|) sum min ||.||^2. Zero iff the point
    sets coincide."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da, _ = kernels.nearest_sq(a, b)
    db, _ = kernels.nearest_sq(b, a)
    return float(da.sum() / a.shape[0] + db.sum() / b.shape[0])


def chamfer_l1(a, b):
    """Same as chamfer_sq but with plain euclidean distances."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da, _ = kernels.nearest_sq(a, b)
    db, _ = kernels.nearest_sq(b, a)
    return float(np.sqrt(da).sum() / a.shape[0] + np.sqrt(db).sum() / b.shape[0])


# ---------------------------------------------------------------------------
# orthographic z-buffer rasterization
# ---------------------------------------------------------------------------

def rasterize_masks(camera_clouds, m, half_extent):
    """Splat posed part clouds onto an m x m grid looking along -z.

    Each covered pixel belongs to the part whose point is nearest the camera
    (largest z); uncovered pixels form the background. Returns
    (part_masks (N, m, m) bool, background (m, m) bool, depth (m, m) float,
    raw owner grid). Masks are pairwise disjoint and together with the
    background tile the grid exactly.
    """
    n = len(camera_clouds)
    if n == 0 or sum(c.shape[0] for c in camera_clouds) == 0:
        owner = np.full((m, m), -1, dtype=np.int64)
        depth = np.full((m, m), -np.inf)
    else:
        points = np.concatenate(camera_clouds, axis=0)
        ids = np.concatenate([
            np.full(c.shape[0], i, dtype=np.int64) for i, c in enumerate(camera_clouds)
        ])
        owner, depth = kernels.zbuffer(points, ids, m, half_extent)
    masks = np.stack([owner == i for i in range(n)]) if n else np.zeros((0, m, m), bool)
    background = owner < 0
    return masks, background, depth, owner


def view_matrix(azimuth_deg, elevation_deg):
    """Rows are the camera axes of a turntable view; depth axis points from
    the object toward the camera, so larger z_cam means nearer."""
    az = np.deg2rad(azimuth_deg)
    el = np.deg2rad(elevation_deg)
    direction = np.array([
        np.cos(el) * np.cos(az),
        np.cos(el) * np.sin(az),
        np.sin(el),
    ])
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(up, direction)
    norm = np.linalg.norm(right)
    if norm < 1e-9:
        right = np.array([1.0, 0.0, 0.0])
    else:
        right = right / norm
    cam_up = np.cross(direction, right)
    return np.stack([right, cam_up, direction])
