"""Parts, geometric equivalence classes, and full shape records.

Parts arrive canonicalized (zero-mean, PCA frame) and globally scaled.
Two parts are geometrically equivalent when all three AABB extents differ
by less than ``aabb_tol`` AND the chamfer distance between their canonical
clouds, normalized by the mean AABB diagonal, is below ``chamfer_tol``.
Pairwise similarity is not transitive, so classes are the connected
components of the similarity graph — this guarantees a partition.
"""

from dataclasses import dataclass, field

import numpy as np

from . import geometry

P_MAX = 20


@dataclass
class Part:
    part_id: int
    cloud: np.ndarray          # canonical, zero-mean
    aabb: geometry.AABB
    class_id: int = -1
    instance_index: int = -1

    @classmethod
    def from_cloud(cls, part_id, cloud):
        cloud = np.asarray(cloud, dtype=np.float64)
        return cls(part_id=part_id, cloud=cloud, aabb=geometry.AABB.of_cloud(cloud))


@dataclass
class EquivalenceClass:
    class_id: int
    member_ids: list
    representative: np.ndarray  # cloud of the lowest-id member

    def __len__(self):
        return len(self.member_ids)


@dataclass
class CameraParams:
    azimuth_deg: float
    elevation_deg: float
    half_extent: float
    m: int

    def view_matrix(self):
        return geometry.view_matrix(self.azimuth_deg, self.elevation_deg)


@dataclass
class ShapeRecord:
    """One assembly instance: parts, ground-truth poses, rendered view."""
    shape_id: str
    template: str
    parts: list
    poses: list                 # PartPose per part, camera space
    classes: list               # EquivalenceClass list
    masks: np.ndarray           # (N, m, m) bool ground-truth instance masks
    background: np.ndarray      # (m, m) bool
    depth: np.ndarray           # (m, m) float, -inf where uncovered
    camera: CameraParams
    split: str = ""
    onehots: np.ndarray = field(default=None)

    @property
    def n_parts(self):
        return len(self.parts)

    def visible_flags(self):
        """Visible means the ground-truth mask has at least one pixel."""
        return np.array([m.any() for m in self.masks])

    def gt_camera_clouds(self):
        return [geometry.apply_pose(p.cloud, pose)
                for p, pose in zip(self.parts, self.poses)]

    def gt_assembly(self):
        return np.concatenate(self.gt_camera_clouds(), axis=0)

    def class_id_lists(self):
        return [list(c.member_ids) for c in self.classes]

    def validate(self):
        n = self.n_parts
        if not 1 <= n <= P_MAX:
            raise ValueError(f"{self.shape_id}: part count {n} outside 1..{P_MAX}")
        if len(self.poses) != n or self.masks.shape[0] != n:
            raise ValueError(f"{self.shape_id}: parts/poses/masks counts differ")
        covered = sorted(i for c in self.classes for i in c.member_ids)
        if covered != list(range(n)):
            raise ValueError(f"{self.shape_id}: classes do not partition parts")
        total = self.masks.sum(axis=0) + self.background
        if not np.array_equal(total, np.ones_like(self.background, dtype=np.int64)):
            raise ValueError(f"{self.shape_id}: masks + background do not tile the grid")


def detect_equivalence_classes(parts, aabb_tol=0.1, chamfer_tol=0.02):
    """Group parts into geometric equivalence classes.

    The AABB extent gate is absolute (parts are globally normalized); the
    chamfer gate uses non-squared chamfer scaled by the pair's mean AABB
    diagonal. Classes come back sorted by their lowest member id, members
    sorted ascending, representative = lowest-id member's cloud.
    """
    n = len(parts)
    adjacency = [[] for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            a, b = parts[i], parts[j]
            if np.any(np.abs(a.aabb.extents - b.aabb.extents) >= aabb_tol):
                continue
            mean_diag = 0.5 * (a.aabb.diagonal + b.aabb.diagonal)
            if mean_diag <= 0.0:
                continue
            d = geometry.chamfer_l1(a.cloud, b.cloud) / mean_diag
            if d < chamfer_tol:
                adjacency[i].append(j)
                adjacency[j].append(i)
    seen = [False] * n
    classes = []
    for root in range(n):
        if seen[root]:
            continue
        stack = [root]
        seen[root] = True
        members = []
        while stack:
            k = stack.pop()
            members.append(k)
            for nb in adjacency[k]:
                if not seen[nb]:
                    seen[nb] = True
                    stack.append(nb)
        members.sort()
        classes.append(EquivalenceClass(
            class_id=len(classes),
            member_ids=members,
            representative=parts[members[0]].cloud,
        ))
    for cls in classes:
        for rank, pid in enumerate(cls.member_ids):
            parts[pid].class_id = cls.class_id
            parts[pid].instance_index = rank
    return classes


def build_instance_onehots(classes, n_parts, p_max=P_MAX):
    """Length-p_max one-hot per part: position = rank within its class.

    Members of a class get distinct positions 0..size-1 (by ascending part
    id); singletons get position 0.
    """
    onehots = np.zeros((n_parts, p_max))
    for cls in classes:
        if len(cls.member_ids) > p_max:
            raise ValueError(f"class of {len(cls.member_ids)} exceeds p_max={p_max}")
        for rank, pid in enumerate(sorted(cls.member_ids)):
            onehots[pid, rank] = 1.0
    return onehots
