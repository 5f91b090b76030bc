"""Dataset-level evaluation: per-shape metric records plus aggregate tables.

Metrics land in two files per run: ``metrics.csv`` (one row per shape;
machine-readable, full float precision) and ``metrics.txt`` (aggregate
table per template plus an overall row). Part accuracies average per shape
first, then across shapes; the visible/invisible splits average over the
shapes where the split is defined.
"""

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import geometry, losses

CSV_HEADER = ("shape_id,template,split,n_parts,n_visible,n_invisible,"
              "part_accuracy,visible_accuracy,invisible_accuracy,shape_chamfer")


def gt_pose_arrays(record):
    q = np.stack([p.rotation for p in record.poses])
    t = np.stack([p.translation for p in record.poses])
    return q, t


def random_pose_arrays(record, rng, translation_scale=0.5):
    """Uniform random baseline: random unit quaternions, translations in a
    cube matching the scene scale."""
    n = record.n_parts
    q = np.stack([geometry.random_unit_quaternion(rng) for _ in range(n)])
    t = rng.uniform(-translation_scale, translation_scale, size=(n, 3))
    return q, t


def evaluate_records(records, pose_fn, tau=0.1, jobs=1):
    """Run ``pose_fn(record) -> (q, t)`` over records and score each.

    Returns rows sorted by shape id, independent of execution order.
    """
    def one(rec):
        q, t = pose_fn(rec)
        return rec.shape_id, rec, losses.evaluate_poses(q, t, rec, tau=tau)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, records))
    else:
        results = [one(rec) for rec in records]
    results.sort(key=lambda r: r[0])
    return [(rec, metrics) for _sid, rec, metrics in results]


def _nanmean(values):
    values = [v for v in values if not np.isnan(v)]
    return float(np.mean(values)) if values else float("nan")


def aggregate(rows):
    """Per-template and overall means of PA / visible PA / invisible PA / SC."""
    groups = {}
    for rec, m in rows:
        groups.setdefault(rec.template, []).append(m)
    out = {}
    for name in sorted(groups) + ["overall"]:
        ms = [m for _rec, m in rows] if name == "overall" else groups[name]
        out[name] = {
            "count": len(ms),
            "part_accuracy": _nanmean([m.part_accuracy for m in ms]),
            "visible_accuracy": _nanmean([m.visible_accuracy for m in ms]),
            "invisible_accuracy": _nanmean([m.invisible_accuracy for m in ms]),
            "shape_chamfer": _nanmean([m.shape_chamfer for m in ms]),
        }
    return out


def metrics_csv_lines(rows):
    lines = [CSV_HEADER]
    for rec, m in rows:
        lines.append(
            f"{rec.shape_id},{rec.template},{rec.split},{rec.n_parts},"
            f"{m.n_visible},{m.n_invisible},{m.part_accuracy!r},"
            f"{m.visible_accuracy!r},{m.invisible_accuracy!r},{m.shape_chamfer!r}")
    return lines


def metrics_table(agg, title="metrics"):
    lines = [title,
             f"{'template':<12}{'shapes':>8}{'PA':>10}{'PA(vis)':>10}"
             f"{'PA(invis)':>11}{'SC':>12}"]
    for name, vals in agg.items():
        lines.append(
            f"{name:<12}{vals['count']:>8}{vals['part_accuracy']:>10.4f}"
            f"{vals['visible_accuracy']:>10.4f}{vals['invisible_accuracy']:>11.4f}"
            f"{vals['shape_chamfer']:>12.6f}")
    return "\n".join(lines)


def write_metrics(rows, out_dir, title="metrics"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.csv").write_text("\n".join(metrics_csv_lines(rows)) + "\n")
    agg = aggregate(rows)
    table = metrics_table(agg, title)
    (out_dir / "metrics.txt").write_text(table + "\n")
    return agg, table
