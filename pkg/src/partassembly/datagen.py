"""Procedural synthetic furniture generator.

Shapes are built from axis-aligned boxes placed in contact (legs under a
top, slats in a frame, shelves between sides). Duplicate parts within one
shape share a single canonical template cloud, which guarantees exact
geometric equivalence classes. The generator then mirrors the full input
pipeline: global scale normalization, a turntable camera, orthographic
depth rendering, and z-buffered instance masks.

A fraction of views snaps to an axis-aligned, zero-elevation camera, which
makes back legs / interior boards fall exactly behind their front
counterparts: those parts render empty masks and exercise the
invisible-part path.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import dataset as dataset_mod
from . import geometry, parts
from .geometry import AABB, PartPose
from .parts import CameraParams, Part, ShapeRecord

TEMPLATES = ("table", "chair", "cabinet")


@dataclass
class SyntheticSpec:
    template: str = "mix"            # table | chair | cabinet | mix | all
    d_pc: int = 1000
    m: int = 32
    half_extent: float = 0.75
    noise_scale: float = 0.0
    merge_prob: float = 0.0          # merge a subassembly into one part
    stretcher_prob: float = 0.5
    slat_range: tuple = (2, 4)
    shelf_range: tuple = (1, 3)
    azimuth_range: tuple = (0.0, 360.0)
    elevation_range: tuple = (10.0, 40.0)
    axis_snap_prob: float = 0.35

    def templates(self):
        if self.template == "mix":
            return ("table", "chair")
        if self.template == "all":
            return TEMPLATES
        if self.template not in TEMPLATES:
            raise ValueError(f"unknown template {self.template!r}")
        return (self.template,)


@dataclass
class _Box:
    dims: np.ndarray
    center: np.ndarray
    template_key: str      # parts sharing a key share one canonical cloud
    group: str             # mergeable subassembly tag


def _sample_box_surface(rng, dims, n):
    """Uniform area-weighted sample of a box surface centered at origin."""
    dx, dy, dz = dims
    areas = np.array([dy * dz, dy * dz, dx * dz, dx * dz, dx * dy, dx * dy])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, size=n)
    v = rng.uniform(-0.5, 0.5, size=n)
    pts = np.empty((n, 3))
    for i in range(n):
        f = face[i]
        if f < 2:
            pts[i] = ((0.5 if f == 0 else -0.5) * dx, u[i] * dy, v[i] * dz)
        elif f < 4:
            pts[i] = (u[i] * dx, (0.5 if f == 2 else -0.5) * dy, v[i] * dz)
        else:
            pts[i] = (u[i] * dx, v[i] * dy, (0.5 if f == 4 else -0.5) * dz)
    return pts


def _box_template(rng, dims, d_pc, noise_scale):
    raw = _sample_box_surface(rng, dims, 4 * d_pc)
    if noise_scale > 0.0:
        raw = raw + rng.normal(scale=noise_scale, size=raw.shape)
    sampled = geometry.fps(raw, d_pc, start=0)
    canon, _, _ = geometry.pca_canonicalize(sampled)
    return canon


def _placement_rotation(canon_extents, world_dims):
    """Rotation mapping a canonical box (extents sorted by PCA) onto a world
    box with the given dims; boxes are flip-symmetric so the det is fixed by
    negating the least significant axis."""
    src = sorted(range(3), key=lambda a: (-canon_extents[a], a))
    dst = sorted(range(3), key=lambda a: (-world_dims[a], a))
    rot = np.zeros((3, 3))
    for k in range(3):
        rot[dst[k], src[k]] = 1.0
    if np.linalg.det(rot) < 0.0:
        rot[dst[2], src[2]] *= -1.0
    return rot


# ---------------------------------------------------------------------------
# templates
# ---------------------------------------------------------------------------

def _build_table(rng, spec):
    w = rng.uniform(0.8, 1.4)
    d = rng.uniform(0.6, 1.1)
    t = rng.uniform(0.05, 0.09)
    h = rng.uniform(0.55, 0.95)
    s = rng.uniform(0.06, 0.11)
    inset = rng.uniform(0.0, 0.04)
    boxes = [_Box(np.array([w, d, t]), np.array([0.0, 0.0, h - t / 2]), "top", "top")]
    leg_h = h - t
    lx = w / 2 - s / 2 - inset
    ly = d / 2 - s / 2 - inset
    for sx in (-1, 1):
        for sy in (-1, 1):
            boxes.append(_Box(np.array([s, s, leg_h]),
                              np.array([sx * lx, sy * ly, leg_h / 2]),
                              "leg", "base"))
    if rng.random() < spec.stretcher_prob:
        st = rng.uniform(0.04, 0.07)
        zs = rng.uniform(0.12, 0.3) * leg_h
        for sy in (-1, 1):
            boxes.append(_Box(np.array([2 * lx, st, st]),
                              np.array([0.0, sy * ly, zs]),
                              "stretcher", "base"))
    return boxes


def _build_chair(rng, spec):
    w = rng.uniform(0.7, 1.0)
    d = rng.uniform(0.65, 0.95)
    t = rng.uniform(0.05, 0.08)
    hs = rng.uniform(0.45, 0.6)
    s = rng.uniform(0.06, 0.1)
    boxes = [_Box(np.array([w, d, t]), np.array([0.0, 0.0, hs - t / 2]), "seat", "seat")]
    leg_h = hs - t
    lx = w / 2 - s / 2
    ly = d / 2 - s / 2
    for sx in (-1, 1):
        for sy in (-1, 1):
            boxes.append(_Box(np.array([s, s, leg_h]),
                              np.array([sx * lx, sy * ly, leg_h / 2]),
                              "leg", "base"))
    hb = rng.uniform(0.55, 0.85)
    if rng.random() < 0.4:
        tb = rng.uniform(0.05, 0.08)
        boxes.append(_Box(np.array([w, tb, hb]),
                          np.array([0.0, d / 2 - tb / 2, hs + hb / 2]),
                          "back", "back"))
    else:
        for sx in (-1, 1):
            boxes.append(_Box(np.array([s, s, hb]),
                              np.array([sx * lx, ly, hs + hb / 2]),
                              "stile", "back"))
        n_slats = int(rng.integers(spec.slat_range[0], spec.slat_range[1] + 1))
        slat_h = rng.uniform(0.07, 0.13)
        slat_t = rng.uniform(0.04, 0.06)
        levels = np.linspace(hs + 0.25 * hb, hs + 0.9 * hb, n_slats)
        for z in levels:
            boxes.append(_Box(np.array([2 * lx - s, slat_t, slat_h]),
                              np.array([0.0, ly, z]),
                              "slat", "back"))
    return boxes


def _build_cabinet(rng, spec):
    w = rng.uniform(0.75, 1.1)
    d = rng.uniform(0.38, 0.55)
    h = rng.uniform(0.95, 1.4)
    t = rng.uniform(0.04, 0.06)
    boxes = []
    for sx in (-1, 1):
        boxes.append(_Box(np.array([t, d, h]),
                          np.array([sx * (w / 2 - t / 2), 0.0, h / 2]),
                          "side", "carcass"))
    for sz, name in ((1, "cap"), (0, "cap")):
        z = h - t / 2 if sz else t / 2
        boxes.append(_Box(np.array([w - 2 * t, d, t]),
                          np.array([0.0, 0.0, z]),
                          "cap", "carcass"))
    boxes.append(_Box(np.array([w - 2 * t, t, h - 2 * t]),
                      np.array([0.0, d / 2 - t / 2, h / 2]),
                      "backpanel", "carcass"))
    n_shelves = int(rng.integers(spec.shelf_range[0], spec.shelf_range[1] + 1))
    shelf_d = d - 0.18
    levels = np.linspace(t, h - t, n_shelves + 2)[1:-1]
    for z in levels:
        boxes.append(_Box(np.array([w - 2 * t, shelf_d, t]),
                          np.array([0.0, -0.09, z]),
                          "shelf", "shelves"))
    return boxes


_BUILDERS = {"table": _build_table, "chair": _build_chair, "cabinet": _build_cabinet}


# ---------------------------------------------------------------------------
# shape assembly
# ---------------------------------------------------------------------------

def _intended_partition(keys):
    groups = {}
    for i, key in enumerate(keys):
        groups.setdefault(key, []).append(i)
    return sorted(sorted(m) for m in groups.values())


def _assemble(rng, spec, template):
    boxes = _BUILDERS[template](rng, spec)
    templates = {}
    for box in boxes:
        if box.template_key not in templates:
            templates[box.template_key] = _box_template(
                rng, box.dims, spec.d_pc, spec.noise_scale)
    placements = []   # (canonical cloud key, rotation, world center, group)
    for box in boxes:
        canon = templates[box.template_key]
        ext = AABB.of_cloud(canon).extents
        rot = _placement_rotation(ext, box.dims)
        placements.append([box.template_key, rot, box.center.copy(), box.group])

    # center the world assembly at the origin
    world_clouds = [templates[k] @ r.T + c for k, r, c, _ in placements]
    lo = np.min([w.min(axis=0) for w in world_clouds], axis=0)
    hi = np.max([w.max(axis=0) for w in world_clouds], axis=0)
    shift = (lo + hi) / 2
    for p in placements:
        p[2] = p[2] - shift

    # optional subassembly merge (pre-assembled unit handed in as one part)
    if spec.merge_prob > 0.0 and rng.random() < spec.merge_prob:
        groups = {}
        for i, p in enumerate(placements):
            groups.setdefault(p[3], []).append(i)
        mergeable = sorted(g for g, ids in groups.items() if len(ids) >= 2)
        if mergeable:
            pick = mergeable[int(rng.integers(len(mergeable)))]
            ids = groups[pick]
            union = np.concatenate(
                [templates[placements[i][0]] @ placements[i][1].T + placements[i][2]
                 for i in ids], axis=0)
            sampled = geometry.fps(union, spec.d_pc, start=0)
            canon, frame, centroid = geometry.pca_canonicalize(sampled)
            key = f"merged_{pick}"
            templates[key] = canon
            merged = [key, frame.T, centroid, pick]
            placements = [p for i, p in enumerate(placements) if i not in ids]
            placements.append(merged)

    # global scale: longest canonical AABB diagonal across parts becomes 1
    used = sorted({p[0] for p in placements})
    clouds = [templates[k] for k in used]
    scaled, factor = geometry.normalize_global_scale(clouds)
    templates = dict(zip(used, scaled))
    for p in placements:
        p[2] = p[2] * factor
    return templates, placements


def generate_shape(spec, seed, shape_id=None, template=None):
    """Build one deterministic ShapeRecord from a spec and a seed."""
    rng = np.random.default_rng(seed)
    choices = spec.templates()
    if template is None:
        template = choices[int(rng.integers(len(choices)))] if len(choices) > 1 else choices[0]

    for _attempt in range(25):
        templates, placements = _assemble(rng, spec, template)
        part_list = [
            Part.from_cloud(i, templates[key])
            for i, (key, _r, _c, _g) in enumerate(placements)
        ]
        if len(part_list) > parts.P_MAX:
            raise ValueError(f"spec produced {len(part_list)} parts > {parts.P_MAX}")
        classes = parts.detect_equivalence_classes(part_list)
        detected = sorted(sorted(c.member_ids) for c in classes)
        intended = _intended_partition([p[0] for p in placements])
        if detected == intended:
            break
    else:
        raise RuntimeError(
            f"seed {seed}: equivalence detection kept disagreeing with construction")

    # camera: snapped axis views at zero elevation create exact occlusions
    if rng.random() < spec.axis_snap_prob:
        azimuth = float(rng.choice([0.0, 90.0, 180.0, 270.0]))
        elevation = 0.0
    else:
        azimuth = float(rng.uniform(*spec.azimuth_range))
        elevation = float(rng.uniform(*spec.elevation_range))
    view = geometry.view_matrix(azimuth, elevation)

    poses = []
    for key, rot, center, _group in placements:
        q = geometry.quat_from_matrix(view @ rot)
        poses.append(PartPose(q, view @ center))

    camera_clouds = [
        geometry.apply_pose(part.cloud, pose)
        for part, pose in zip(part_list, poses)
    ]
    for cloud in camera_clouds:
        if np.abs(cloud[:, :2]).max() >= spec.half_extent:
            raise RuntimeError(f"seed {seed}: assembly exceeds the view volume")
    masks, background, depth, _ = geometry.rasterize_masks(
        camera_clouds, spec.m, spec.half_extent)

    record = ShapeRecord(
        shape_id=shape_id or f"shape_{seed:08d}",
        template=template,
        parts=part_list,
        poses=poses,
        classes=classes,
        masks=masks,
        background=background,
        depth=depth,
        camera=CameraParams(azimuth, elevation, spec.half_extent, spec.m),
    )
    record.onehots = parts.build_instance_onehots(classes, record.n_parts)
    record.validate()
    return record


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def make_dataset(spec, n_train, n_val, n_test, seed, out_dir):
    """Generate a split dataset; each shape gets its own derived seed."""
    entries = []
    counts = (("train", n_train), ("val", n_val), ("test", n_test))
    index = 0
    for split, count in counts:
        for _ in range(count):
            entries.append({
                "id": f"shape_{index:05d}",
                "split": split,
                "seed": int(seed * 1_000_003 + index),
            })
            index += 1
    records = []
    for entry in entries:
        rec = generate_shape(spec, entry["seed"], shape_id=entry["id"])
        rec.split = entry["split"]
        records.append(rec)
    manifest = {
        "schema": dataset_mod.SCHEMA_VERSION,
        "spec": _spec_dict(spec),
        "base_seed": seed,
        "counts": {"train": n_train, "val": n_val, "test": n_test},
        "shapes": entries,
        "invisible_parts": int(sum(
            (~r.visible_flags()).sum() for r in records)),
    }
    dataset_mod.save_dataset(records, manifest, out_dir)
    return dataset_mod.load_dataset(out_dir)


def _spec_dict(spec):
    d = asdict(spec)
    for key, val in d.items():
        if isinstance(val, tuple):
            d[key] = list(val)
    return d


def spec_from_dict(d):
    kwargs = dict(d)
    for key in ("slat_range", "shelf_range", "azimuth_range", "elevation_range"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return SyntheticSpec(**kwargs)


def regenerate_dataset(manifest_path, out_dir):
    """Rebuild a dataset solely from its manifest (for reproducibility)."""
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    spec = spec_from_dict(manifest["spec"])
    records = []
    for entry in manifest["shapes"]:
        rec = generate_shape(spec, entry["seed"], shape_id=entry["id"])
        rec.split = entry["split"]
        records.append(rec)
    dataset_mod.save_dataset(records, manifest, out_dir)
    return dataset_mod.load_dataset(out_dir)
