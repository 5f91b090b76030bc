"""On-disk dataset format.

A dataset directory holds:

    manifest.json    generator spec, split membership, per-shape seeds
    records.jsonl    one JSON object per shape referencing blobs by
                     relative path
    blobs/           binary payloads

Binary blob formats (all little-endian):

    cloud  'PCLD' u32-version u64-count, then count*3 float64
    masks  'MSKS' u32-version u32-count u32-m u32-m, then packed bits
    grid   'GRID' u32-version u32-m u32-m, then m*m float64
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import parts as parts_mod
from .geometry import AABB, PartPose
from .parts import CameraParams, EquivalenceClass, Part, ShapeRecord

SCHEMA_VERSION = 1


class DatasetError(RuntimeError):
    pass


def _write_header(fh, magic, *fields):
    fh.write(magic)
    fh.write(np.asarray([SCHEMA_VERSION, *fields], dtype="<u4").tobytes())


def _read_header(fh, magic, n_fields):
    got = fh.read(4)
    if got != magic:
        raise DatasetError(f"bad magic {got!r}, expected {magic!r}")
    raw = np.frombuffer(fh.read(4 * (1 + n_fields)), dtype="<u4")
    if raw[0] != SCHEMA_VERSION:
        raise DatasetError(f"unsupported blob version {raw[0]}")
    return raw[1:]


def write_cloud(path, points):
    points = np.ascontiguousarray(points, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(b"PCLD")
        fh.write(np.asarray([SCHEMA_VERSION], dtype="<u4").tobytes())
        fh.write(np.asarray([points.shape[0]], dtype="<u8").tobytes())
        fh.write(points.astype("<f8").tobytes())


def read_cloud(path):
    with open(path, "rb") as fh:
        if fh.read(4) != b"PCLD":
            raise DatasetError(f"{path}: not a cloud blob")
        version = np.frombuffer(fh.read(4), dtype="<u4")[0]
        if version != SCHEMA_VERSION:
            raise DatasetError(f"{path}: unsupported version {version}")
        count = int(np.frombuffer(fh.read(8), dtype="<u8")[0])
        data = np.frombuffer(fh.read(count * 24), dtype="<f8")
    return data.reshape(count, 3).copy()


def write_masks(path, masks):
    """masks: (k, m, m) bool array, packed to bitsets."""
    masks = np.asarray(masks, dtype=bool)
    k, m, m2 = masks.shape
    if m != m2:
        raise DatasetError("masks must be square")
    with open(path, "wb") as fh:
        _write_header(fh, b"MSKS", k, m, m)
        fh.write(np.packbits(masks.reshape(-1)).tobytes())


def read_masks(path):
    with open(path, "rb") as fh:
        k, m, m2 = (int(x) for x in _read_header(fh, b"MSKS", 3))
        bits = np.frombuffer(fh.read(), dtype=np.uint8)
    flat = np.unpackbits(bits, count=k * m * m2).astype(bool)
    return flat.reshape(k, m, m2)


def write_grid(path, grid):
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    with open(path, "wb") as fh:
        _write_header(fh, b"GRID", grid.shape[0], grid.shape[1])
        fh.write(grid.astype("<f8").tobytes())


def read_grid(path):
    with open(path, "rb") as fh:
        rows, cols = (int(x) for x in _read_header(fh, b"GRID", 2))
        data = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8")
    return data.reshape(rows, cols).copy()


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

def save_record(record, root):
    """Write a ShapeRecord's blobs under root/blobs and return its JSON row."""
    root = Path(root)
    blob_dir = root / "blobs"
    blob_dir.mkdir(parents=True, exist_ok=True)
    cloud_paths = []
    for part in record.parts:
        rel = f"blobs/{record.shape_id}_part{part.part_id}.bin"
        write_cloud(root / rel, part.cloud)
        cloud_paths.append(rel)
    mask_rel = f"blobs/{record.shape_id}_masks.bin"
    stacked = np.concatenate([record.masks, record.background[None]], axis=0)
    write_masks(root / mask_rel, stacked)
    depth_rel = f"blobs/{record.shape_id}_depth.bin"
    write_grid(root / depth_rel, record.depth)
    return {
        "schema": SCHEMA_VERSION,
        "id": record.shape_id,
        "template": record.template,
        "split": record.split,
        "n_parts": record.n_parts,
        "camera": {
            "azimuth_deg": record.camera.azimuth_deg,
            "elevation_deg": record.camera.elevation_deg,
            "half_extent": record.camera.half_extent,
            "m": record.camera.m,
        },
        "poses": [
            list(map(float, np.concatenate([p.rotation, p.translation])))
            for p in record.poses
        ],
        "classes": record.class_id_lists(),
        "clouds": cloud_paths,
        "masks": mask_rel,
        "depth": depth_rel,
    }


def load_record(row, root):
    root = Path(root)
    if row.get("schema") != SCHEMA_VERSION:
        raise DatasetError(f"record {row.get('id')}: unsupported schema")
    part_list = []
    for pid, rel in enumerate(row["clouds"]):
        cloud = read_cloud(root / rel)
        part_list.append(Part(part_id=pid, cloud=cloud, aabb=AABB.of_cloud(cloud)))
    classes = []
    for cid, members in enumerate(row["classes"]):
        members = sorted(members)
        classes.append(EquivalenceClass(
            class_id=cid, member_ids=members,
            representative=part_list[members[0]].cloud))
        for rank, pid in enumerate(members):
            part_list[pid].class_id = cid
            part_list[pid].instance_index = rank
    stacked = read_masks(root / row["masks"])
    depth = read_grid(root / row["depth"])
    poses = [
        PartPose(np.asarray(vals[:4]), np.asarray(vals[4:]))
        for vals in row["poses"]
    ]
    cam = CameraParams(**row["camera"])
    record = ShapeRecord(
        shape_id=row["id"],
        template=row["template"],
        parts=part_list,
        poses=poses,
        classes=classes,
        masks=stacked[:-1],
        background=stacked[-1],
        depth=depth,
        camera=cam,
        split=row.get("split", ""),
    )
    record.onehots = parts_mod.build_instance_onehots(classes, record.n_parts)
    record.validate()
    return record


@dataclass
class Dataset:
    root: Path
    manifest: dict
    records: list

    def split(self, name):
        return [r for r in self.records if r.split == name]

    def by_id(self, shape_id):
        for r in self.records:
            if r.shape_id == shape_id:
                return r
        raise KeyError(shape_id)


def save_dataset(records, manifest, root):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rows = [save_record(r, root) for r in records]
    with open(root / "records.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_dataset(root):
    root = Path(root)
    manifest_path = root / "manifest.json"
    records_path = root / "records.jsonl"
    if not manifest_path.exists() or not records_path.exists():
        raise DatasetError(f"{root} is not a dataset directory")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    records = []
    with open(records_path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(load_record(json.loads(line), root))
    return Dataset(root=root, manifest=manifest, records=records)
