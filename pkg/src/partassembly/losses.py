"""Training losses and evaluation metrics.

All losses are made order-invariant inside each geometric equivalence class
by Hungarian matching, recomputed from the current predictions every call:

  * mask loss matches on negative soft-IoU;
  * pose loss matches on the weighted translation + rotation-chamfer cost;
  * part accuracy matches on posed-cloud squared chamfer.

Per-part loss terms are summed over parts in ground-truth index order
(which makes within-class permutations of the predictions bit-neutral);
the part-accuracy metric averages per shape.
"""

from dataclasses import dataclass

import numpy as np

from . import assignment, geometry
from .autodiff import Tensor
from .autodiff import ops

SOFT_IOU_EPS = 1e-6


@dataclass
class LossWeights:
    """Term weights: translation, rotation chamfer, rotation L2, assembly."""
    translation: float = 1.0
    rotation_chamfer: float = 20.0
    rotation_l2: float = 1.0
    assembly: float = 1.0


def _tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# mask loss
# ---------------------------------------------------------------------------

def soft_iou_value(pred, gt):
    """Smoothed soft-IoU of a soft mask against a binary one (numpy)."""
    pred = pred.reshape(-1)
    gt = gt.reshape(-1).astype(np.float64)
    inter = float((pred * gt).sum())
    union = float(pred.sum() + gt.sum() - inter)
    return (inter + SOFT_IOU_EPS) / (union + SOFT_IOU_EPS)


def negative_soft_iou(pred, gt):
    """Differentiable -soft-IoU for one (pred, gt) mask pair.

    The epsilon smoothing sends empty-vs-empty to -1, so fully occluded
    parts with correctly empty predictions are not penalized.
    """
    pred_flat = ops.flatten(pred) if pred.data.ndim > 1 else pred
    gt_flat = _tensor(np.asarray(gt, dtype=np.float64).reshape(-1))
    inter = ops.sumall(ops.mul(pred_flat, gt_flat))
    union = ops.sub(ops.add(ops.sumall(pred_flat), ops.sumall(gt_flat)), inter)
    iou = ops.div(ops.add_scalar(inter, SOFT_IOU_EPS), ops.add_scalar(union, SOFT_IOU_EPS))
    return ops.scale(iou, -1.0)


def mask_matching(pred_masks, record):
    """Class-wise Hungarian on negative soft-IoU; returns pred_for_gt."""
    gts = [m.reshape(-1).astype(np.float64) for m in record.masks]
    preds = [np.asarray(p).reshape(-1) for p in pred_masks]

    def cost(pi, gi):
        return -soft_iou_value(preds[pi], gts[gi])

    return assignment.match_within_classes(record.class_id_lists(), cost)


def soft_iou_loss(pred_masks, record):
    """Mean over parts of the matched negative soft-IoU.

    ``pred_masks`` are per-part Tensors (background excluded). Returns
    (mean loss Tensor, per-part loss Tensors in GT order, matching).
    """
    n = record.n_parts
    if len(pred_masks) != n:
        raise ValueError(f"expected {n} predicted masks, got {len(pred_masks)}")
    matching = mask_matching([p.data for p in pred_masks], record)
    per_part = [
        negative_soft_iou(pred_masks[matching[gi]], record.masks[gi])
        for gi in range(n)
    ]
    total = per_part[0]
    for term in per_part[1:]:
        total = ops.add(total, term)
    return ops.scale(total, 1.0 / n), per_part, matching


# ---------------------------------------------------------------------------
# pose loss terms
# ---------------------------------------------------------------------------

def translation_loss(pred_t, gt_t):
    """Euclidean distance between predicted and true translation."""
    d = ops.sub(_tensor(pred_t), _tensor(gt_t))
    return ops.sqrt(ops.sumall(ops.mul(d, d)))


def rotation_chamfer_loss(pred_q, gt_q, cloud, rotated=None):
    """Squared chamfer between the two rotated copies of a part cloud.

    The primary rotation loss: invariant under exact symmetries of the
    cloud, so symmetric parts do not get penalized for equivalent poses.
    """
    if rotated is None:
        rotated = ops.rotate_points(_tensor(pred_q), Tensor(cloud))
    target = Tensor(cloud @ geometry.quat_to_matrix(gt_q).T)
    return ops.chamfer_sq_pair(rotated, target)


def rotation_l2_loss(pred_q, gt_q, cloud, rotated=None):
    """Pointwise squared-distance rotation regularizer, 1/d_pc scaled.

    Unlike the chamfer term this keeps a signal on nearly-but-not-exactly
    symmetric parts, pulling them out of mirrored local minima.
    """
    if rotated is None:
        rotated = ops.rotate_points(_tensor(pred_q), Tensor(cloud))
    target = Tensor(cloud @ geometry.quat_to_matrix(gt_q).T)
    d = ops.sub(rotated, target)
    return ops.scale(ops.sumall(ops.mul(d, d)), 1.0 / cloud.shape[0])


def assembly_chamfer_loss(pred_union, gt_union):
    """Squared chamfer between full assemblies; the 1/(N*d_pc) scaling is
    the per-side point count normalization."""
    return ops.chamfer_sq_pair(pred_union, _tensor(gt_union))


def pose_matching(pred_q, pred_t, record, weights):
    """Class-wise Hungarian with cost = the per-part pose loss itself."""
    pred_q = np.asarray(pred_q, dtype=np.float64)
    pred_t = np.asarray(pred_t, dtype=np.float64)
    gt_rotated = [
        part.cloud @ geometry.quat_to_matrix(pose.rotation).T
        for part, pose in zip(record.parts, record.poses)
    ]

    def cost(pi, gi):
        part = record.parts[gi]
        q = geometry.quat_normalize(pred_q[pi])
        rot = part.cloud @ geometry.quat_to_matrix(q).T
        c = weights.translation * float(
            np.linalg.norm(pred_t[pi] - record.poses[gi].translation))
        c += weights.rotation_chamfer * geometry.chamfer_sq(rot, gt_rotated[gi])
        return c

    return assignment.match_within_classes(record.class_id_lists(), cost)


def total_pose_loss(pred_q, pred_t, record, weights=None, include_rotation_l2=True):
    """Matched pose loss: sum over parts of the weighted translation,
    rotation-chamfer, and rotation-L2 terms, plus the assembly chamfer.

    ``pred_q`` / ``pred_t`` are per-part Tensors (unit quaternions and
    translations). Returns (total Tensor, per-term float breakdown,
    matching).
    """
    weights = weights or LossWeights()
    n = record.n_parts
    matching = pose_matching(
        np.stack([q.data for q in pred_q]),
        np.stack([t.data for t in pred_t]),
        record, weights)

    t_terms = []
    c_terms = []
    e_terms = []
    posed = []
    for gi in range(n):
        pi = int(matching[gi])
        part = record.parts[gi]
        pose = record.poses[gi]
        rotated = ops.rotate_points(pred_q[pi], Tensor(part.cloud))
        t_terms.append(translation_loss(pred_t[pi], pose.translation))
        c_terms.append(rotation_chamfer_loss(pred_q[pi], pose.rotation, part.cloud,
                                             rotated=rotated))
        if include_rotation_l2:
            e_terms.append(rotation_l2_loss(pred_q[pi], pose.rotation, part.cloud,
                                            rotated=rotated))
        posed.append(ops.translate_rows(rotated, pred_t[pi]))

    def _sum(terms):
        acc = terms[0]
        for t in terms[1:]:
            acc = ops.add(acc, t)
        return acc

    total = ops.scale(_sum(t_terms), weights.translation)
    total = ops.add(total, ops.scale(_sum(c_terms), weights.rotation_chamfer))
    if include_rotation_l2 and weights.rotation_l2 != 0.0:
        total = ops.add(total, ops.scale(_sum(e_terms), weights.rotation_l2))
    w_term = assembly_chamfer_loss(ops.vstack(posed), record.gt_assembly())
    total = ops.add(total, ops.scale(w_term, weights.assembly))

    breakdown = {
        "translation": float(sum(t.data for t in t_terms)),
        "rotation_chamfer": float(sum(t.data for t in c_terms)),
        "rotation_l2": float(sum(t.data for t in e_terms)) if e_terms else 0.0,
        "assembly": float(w_term.data),
    }
    return total, breakdown, matching


def pose_loss_value(pred_q, pred_t, record, weights=None):
    """Forward-only total pose loss for plain numpy pose arrays."""
    qs = [Tensor(geometry.quat_normalize(q)) for q in np.asarray(pred_q, dtype=np.float64)]
    ts = [Tensor(t) for t in np.asarray(pred_t, dtype=np.float64)]
    total, breakdown, _ = total_pose_loss(qs, ts, record, weights)
    return float(total.data), breakdown


# ---------------------------------------------------------------------------
# evaluation metrics
# ---------------------------------------------------------------------------

@dataclass
class ShapeMetrics:
    part_accuracy: float
    visible_accuracy: float      # nan when the shape has no visible parts
    invisible_accuracy: float    # nan when the shape has no invisible parts
    shape_chamfer: float
    part_hits: np.ndarray
    part_distances: np.ndarray
    n_visible: int
    n_invisible: int


def accuracy_matching(pred_q, pred_t, record):
    """Class-wise Hungarian on posed-cloud squared chamfer."""
    pred_q = np.asarray(pred_q, dtype=np.float64)
    pred_t = np.asarray(pred_t, dtype=np.float64)
    gt_posed = record.gt_camera_clouds()

    def cost(pi, gi):
        part = record.parts[gi]
        q = geometry.quat_normalize(pred_q[pi])
        posed = part.cloud @ geometry.quat_to_matrix(q).T + pred_t[pi]
        return geometry.chamfer_sq(posed, gt_posed[gi])

    return assignment.match_within_classes(record.class_id_lists(), cost)


def evaluate_poses(pred_q, pred_t, record, tau=0.1):
    """Part accuracy (with visible/invisible split) and shape chamfer.

    A part counts as accurate when the squared chamfer between its posed
    cloud (under the matched prediction) and the ground truth is below tau.
    Shape chamfer is the non-squared chamfer between full assemblies.
    """
    pred_q = np.asarray(pred_q, dtype=np.float64)
    pred_t = np.asarray(pred_t, dtype=np.float64)
    n = record.n_parts
    matching = accuracy_matching(pred_q, pred_t, record)
    gt_posed = record.gt_camera_clouds()

    dists = np.empty(n)
    posed_parts = []
    for gi in range(n):
        pi = int(matching[gi])
        part = record.parts[gi]
        q = geometry.quat_normalize(pred_q[pi])
        posed = part.cloud @ geometry.quat_to_matrix(q).T + pred_t[pi]
        posed_parts.append(posed)
        dists[gi] = geometry.chamfer_sq(posed, gt_posed[gi])
    hits = dists < tau
    visible = record.visible_flags()

    def _split_mean(mask):
        return float(hits[mask].mean()) if mask.any() else float("nan")

    sc = geometry.chamfer_l1(np.concatenate(posed_parts, axis=0), record.gt_assembly())
    return ShapeMetrics(
        part_accuracy=float(hits.mean()),
        visible_accuracy=_split_mean(visible),
        invisible_accuracy=_split_mean(~visible),
        shape_chamfer=sc,
        part_hits=hits,
        part_distances=dists,
        n_visible=int(visible.sum()),
        n_invisible=int((~visible).sum()),
    )


def part_accuracy(pred_q, pred_t, record, tau=0.1):
    """Fraction of parts whose posed cloud is within tau of its match."""
    m = evaluate_poses(pred_q, pred_t, record, tau)
    return m.part_accuracy, m.visible_accuracy, m.invisible_accuracy


def shape_chamfer(pred_q, pred_t, record):
    """Non-squared chamfer between the assembled prediction and the truth."""
    return evaluate_poses(pred_q, pred_t, record).shape_chamfer
