"""Point-file export for visual inspection.

Files are plain ASCII, one point per line: ``x y z part_index``. An export
of shape S produces N per-part files (predicted posed clouds, invisible
parts included) plus two composites: the ground-truth assembly and the
predicted assembly.
"""

from pathlib import Path

import numpy as np

from . import geometry


def write_points(path, points, indices):
    points = np.asarray(points, dtype=np.float64)
    indices = np.asarray(indices, dtype=np.int64)
    with open(path, "w") as fh:
        for p, k in zip(points, indices):
            fh.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r} {int(k)}\n")


def read_points(path):
    pts = []
    idx = []
    with open(path) as fh:
        for line in fh:
            x, y, z, k = line.split()
            pts.append((float(x), float(y), float(z)))
            idx.append(int(k))
    return np.array(pts, dtype=np.float64), np.array(idx, dtype=np.int64)


def export_shape(record, pred_q, pred_t, out_dir):
    """Write GT composite, predicted composite, and per-part files.

    Returns the list of written paths (N parts + 2 composites).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    gt_points = []
    gt_idx = []
    for i, (part, pose) in enumerate(zip(record.parts, record.poses)):
        cloud = geometry.apply_pose(part.cloud, pose)
        gt_points.append(cloud)
        gt_idx.append(np.full(cloud.shape[0], i))
    path = out_dir / f"{record.shape_id}_gt.xyz"
    write_points(path, np.concatenate(gt_points), np.concatenate(gt_idx))
    written.append(path)

    pred_points = []
    pred_idx = []
    for i, part in enumerate(record.parts):
        pose = geometry.PartPose(geometry.quat_normalize(pred_q[i]), pred_t[i])
        cloud = geometry.apply_pose(part.cloud, pose)
        pred_points.append(cloud)
        pred_idx.append(np.full(cloud.shape[0], i))
        part_path = out_dir / f"{record.shape_id}_part{i}.xyz"
        write_points(part_path, cloud, np.full(cloud.shape[0], i))
        written.append(part_path)
    path = out_dir / f"{record.shape_id}_pred.xyz"
    write_points(path, np.concatenate(pred_points), np.concatenate(pred_idx))
    written.append(path)
    return written
