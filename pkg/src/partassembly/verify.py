"""Self-verification battery: gradient checks, assignment-vs-enumeration,
loss identities, and structural invariants, each reported with its
tolerance and measured value. ``oracle_checks`` covers the independent
brute-force oracles (chamfer double loops, permutation enumeration, random
subset comparisons, backend agreement)."""

import math
from dataclasses import dataclass

import numpy as np

from . import assignment, geometry, kernels, losses
from .autodiff import Tensor, grad_check, ops
from .datagen import SyntheticSpec, generate_shape
from .posenet import PoseConfig, PoseNet, build_seg_cache, class_edge_list
from .segnet import SegConfig, SegNet


@dataclass
class Check:
    name: str
    tolerance: str
    measured: float
    passed: bool


def _fmt(checks):
    width = max(len(c.name) for c in checks) + 2
    lines = [f"{'check':<{width}}{'tolerance':>14}{'measured':>16}  status"]
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        lines.append(f"{c.name:<{width}}{c.tolerance:>14}{c.measured:>16.3e}  {status}")
    return "\n".join(lines)


def format_report(checks):
    return _fmt(checks)


# ---------------------------------------------------------------------------
# brute-force oracles (kept independent of the kernel implementations)
# ---------------------------------------------------------------------------

def chamfer_sq_brute(a, b):
    def one_way(src, dst):
        total = 0.0
        for p in src:
            best = math.inf
            for q in dst:
                d = ((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 + (p[2] - q[2]) ** 2)
                if d < best:
                    best = d
            total += best
        return total / len(src)
    return one_way(a, b) + one_way(b, a)


def chamfer_l1_brute(a, b):
    def one_way(src, dst):
        total = 0.0
        for p in src:
            best = math.inf
            for q in dst:
                d = math.sqrt((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2
                              + (p[2] - q[2]) ** 2)
                if d < best:
                    best = d
            total += best
        return total / len(src)
    return one_way(a, b) + one_way(b, a)


def min_pairwise_distance(points):
    d = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((d * d).sum(-1))
    np.fill_diagonal(dist, np.inf)
    return float(dist.min())


# ---------------------------------------------------------------------------
# gradient suite
# ---------------------------------------------------------------------------

def _separated_cloud(rng, n, min_gap=0.8):
    """Redraw until all pairwise gaps exceed min_gap, so small parameter
    perturbations cannot flip nearest-neighbor assignments."""
    while True:
        c = rng.normal(size=(n, 3))
        if min_pairwise_distance(c) > min_gap:
            return c


def _bump_winners(*arrays):
    """Strengthen current argmax entries so pool ties stay far away."""
    stacked = np.stack(arrays)
    arg = stacked.argmax(axis=0)
    for i, arr in enumerate(arrays):
        arr[arg == i] += 0.5
    return arrays


def _op_family_cases(rng):
    """One random instance per differentiable-op family, sampled away from
    non-smooth points (relu kinks, pool ties, nearest-neighbor switches)."""
    sign = lambda shape: rng.choice([-1.0, 1.0], size=shape)
    away = lambda shape: sign(shape) * rng.uniform(0.1, 1.0, size=shape)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    cloud = _separated_cloud(rng, 5)
    q_near = q + 0.02 * rng.normal(size=4)  # small rotation error: NN stays put
    cham_a = _separated_cloud(rng, 5)
    cham_b = cham_a + 0.05 * rng.normal(size=(5, 3)) + 0.1
    pool_rows = _bump_winners(*(rng.normal(size=5) for _ in range(3)))
    max_rows = rng.normal(size=(4, 5))
    max_rows[max_rows.argmax(axis=0), np.arange(5)] += 0.5
    gt_bits = (rng.random(6) > 0.5).astype(float)
    cases = {
        "linear": (lambda ts: ops.linear(ts[0], ts[1], ts[2]),
                   [rng.normal(size=4), rng.normal(size=(3, 4)), rng.normal(size=3)]),
        "linear_rows": (lambda ts: ops.linear_rows(ts[0], ts[1], ts[2]),
                        [rng.normal(size=(5, 3)), rng.normal(size=(4, 3)),
                         rng.normal(size=4)]),
        "relu": (lambda ts: ops.relu(ts[0]), [away(6)]),
        "add_mul_div": (
            lambda ts: ops.div(ops.mul(ts[0], ts[1]), ops.add(ts[2], ts[2])),
            [rng.normal(size=5), rng.normal(size=5), away(5) + 2.0]),
        "sub_scale": (lambda ts: ops.scale(ops.sub(ts[0], ts[1]), 1.7),
                      [rng.normal(size=5), rng.normal(size=5)]),
        "sqrt": (lambda ts: ops.sqrt(ts[0]), [rng.uniform(0.1, 2.0, size=5)]),
        "concat": (lambda ts: ops.concat(ts), [rng.normal(size=3), rng.normal(size=4)]),
        "set_max_pool": (lambda ts: ops.set_max_pool(ts), list(pool_rows)),
        "set_mean_pool": (lambda ts: ops.set_mean_pool(ts),
                          [rng.normal(size=5) for _ in range(3)]),
        "max_over_rows": (lambda ts: ops.max_over_rows(ts[0]), [max_rows]),
        "mean_rows": (lambda ts: ops.mean_rows(ts[0]), [rng.normal(size=(4, 5))]),
        "softmax_over_set": (
            lambda ts: ops.sumall(ops.mul(ops.softmax_over_set(ts)[0],
                                          ops.softmax_over_set(ts)[1])),
            [rng.normal(size=6) for _ in range(3)]),
        "gather_stack": (
            lambda ts: ops.hconcat([ops.gather_rows(ts[0], [0, 2, 1]),
                                    ops.gather_rows(ts[0], [2, 2, 0])]),
            [rng.normal(size=(3, 4))]),
        "row_flatten": (
            lambda ts: ops.concat([ops.row(ts[0], 1), ops.flatten(ts[0])]),
            [rng.normal(size=(3, 3))]),
        "vstack": (lambda ts: ops.vstack(ts),
                   [rng.normal(size=(2, 3)), rng.normal(size=(3, 3))]),
        "l2_normalize": (lambda ts: ops.l2_normalize(ts[0]), [q * 1.7]),
        "rotate_points": (lambda ts: ops.rotate_points(ts[0], ts[1]),
                          [q.copy(), rng.normal(size=(5, 3))]),
        "translate_rows": (lambda ts: ops.translate_rows(ts[0], ts[1]),
                           [rng.normal(size=(5, 3)), rng.normal(size=3)]),
        "chamfer_sq_pair": (lambda ts: ops.chamfer_sq_pair(ts[0], ts[1]),
                            [cham_a, cham_b]),
        "translation_loss": (lambda ts: losses.translation_loss(ts[0], ts[1]),
                             [rng.normal(size=3), rng.normal(size=3)]),
        "rotation_chamfer_loss": (
            lambda ts: losses.rotation_chamfer_loss(ops.l2_normalize(ts[0]), q, cloud),
            [q_near]),
        "rotation_l2_loss": (
            lambda ts: losses.rotation_l2_loss(ops.l2_normalize(ts[0]), q, cloud),
            [rng.normal(size=4) + np.array([2.0, 0, 0, 0])]),
        "negative_soft_iou": (
            lambda ts: losses.negative_soft_iou(
                ops.softmax_over_set([ts[0], ts[1]])[0], gt_bits),
            [rng.normal(size=6), rng.normal(size=6)]),
    }
    return cases


def gradient_suite(instances=100, step=1e-4, tol=1e-3, base_seed=1000):
    """Finite-difference check of every op family over seeded instances.

    Returns (family name, worst relative error, pass) tuples.
    """
    family_names = sorted(_op_family_cases(np.random.default_rng(0)))
    results = []
    for name in family_names:
        worst = 0.0
        ok = True
        for i in range(instances):
            rng = np.random.default_rng(base_seed + i)
            fn, inputs = _op_family_cases(rng)[name]
            report = grad_check(fn, inputs, step=step, tol=tol)
            worst = max(worst, report.max_rel_err)
            ok = ok and report.ok
        results.append((name, worst, ok))
    return results


# ---------------------------------------------------------------------------
# verification battery
# ---------------------------------------------------------------------------

def verify_checks(seed=0, grad_instances=5):
    rng = np.random.default_rng(seed)
    checks = []

    for name, worst, ok in gradient_suite(instances=grad_instances, base_seed=seed):
        checks.append(Check(f"grad/{name}", "<1e-3", worst, ok and worst < 1e-3))

    # assignment against enumeration
    worst_gap = 0.0
    for _ in range(25):
        n = int(rng.integers(2, 7))
        costs = rng.normal(size=(n, n))
        gap = abs(assignment.assignment_cost(costs, assignment.hungarian(costs))
                  - assignment.assignment_cost(costs, assignment.brute_force_assignment(costs)))
        worst_gap = max(worst_gap, gap)
    checks.append(Check("hungarian_vs_enumeration", "=0", worst_gap, worst_gap == 0.0))

    # loss identities on a generated shape
    spec = SyntheticSpec(template="table", d_pc=60, m=16)
    rec = generate_shape(spec, int(rng.integers(1 << 30)))
    q = np.stack([p.rotation for p in rec.poses])
    t = np.stack([p.translation for p in rec.poses])
    val, _ = losses.pose_loss_value(q, t, rec)
    checks.append(Check("pose_loss_at_gt", "<=1e-9", abs(val), abs(val) <= 1e-9))

    gt_mask_tensors = [Tensor(m.astype(np.float64)) for m in rec.masks]
    loss, per_part, _ = losses.soft_iou_loss(gt_mask_tensors, rec)
    worst_iou = max(abs(float(p.data) + 1.0) for p in per_part)
    checks.append(Check("soft_iou_at_gt", "<=1e-6", worst_iou, worst_iou <= 1e-6))

    metrics = losses.evaluate_poses(q, t, rec)
    checks.append(Check("part_accuracy_at_gt", "=1", metrics.part_accuracy,
                        metrics.part_accuracy == 1.0))
    checks.append(Check("shape_chamfer_at_gt", "=0", metrics.shape_chamfer,
                        metrics.shape_chamfer == 0.0))

    # network structural invariants on random init
    seg = SegNet(SegConfig(m=16, f2=16, f1=32, dec_hidden=32, pn_hidden=8),
                 np.random.default_rng(seed + 1))
    soft = seg.predict_masks(rec)
    total = sum(m.data for m in soft)
    softmax_err = float(np.abs(total - 1.0).max())
    checks.append(Check("mask_softmax_partition", "<=1e-6", softmax_err,
                        softmax_err <= 1e-6))

    pose_net = PoseNet(PoseConfig(m=16, f2=16, f3=16, pose_hidden=32),
                       np.random.default_rng(seed + 2))
    cache = build_seg_cache(seg, [rec])
    fwd = pose_net.forward_two_stage(rec, cache[rec.shape_id])
    norm_err = max(abs(float(np.linalg.norm(qq.data)) - 1.0) for qq in fwd.output_q)
    checks.append(Check("quaternion_unit_norm", "<=1e-6", norm_err, norm_err <= 1e-6))

    edges = class_edge_list(rec.class_id_lists())
    cls_of = {pid: c.class_id for c in rec.classes for pid in c.member_ids}
    cross = sum(1 for a, b in edges if cls_of[a] != cls_of[b] or a == b)
    checks.append(Check("class_edges_within_class", "=0", float(cross), cross == 0))

    nodes = pose_net.encode_part_inputs(rec, cache[rec.shape_id])
    empty = np.zeros((0, 2), dtype=np.int64)
    final = pose_net.message_pass(nodes, empty, stage=1)
    d0 = pose_net.cfg.node_dim
    iso_err = float(np.abs(final.data[:, 2 * d0:] - nodes.data).max())
    checks.append(Check("isolated_node_identity", "=0", iso_err, iso_err == 0.0))

    # chamfer properties
    a = rng.normal(size=(20, 3))
    b = rng.normal(size=(15, 3))
    sym = abs(geometry.chamfer_sq(a, b) - geometry.chamfer_sq(b, a))
    checks.append(Check("chamfer_symmetry", "=0", sym, sym == 0.0))
    self_d = geometry.chamfer_sq(a, a)
    checks.append(Check("chamfer_self_zero", "=0", self_d, self_d == 0.0))
    brute_gap = abs(geometry.chamfer_sq(a, b) - chamfer_sq_brute(a, b))
    checks.append(Check("chamfer_vs_brute", "<=1e-12", brute_gap, brute_gap <= 1e-12))

    masks, bg, _, _ = geometry.rasterize_masks(
        [rng.uniform(-0.4, 0.4, size=(100, 3)) for _ in range(3)], 16, 0.5)
    part_err = float(np.abs(masks.sum(0) + bg - 1).max())
    checks.append(Check("raster_partition", "=0", part_err, part_err == 0.0))
    return checks


# ---------------------------------------------------------------------------
# oracle battery
# ---------------------------------------------------------------------------

def oracle_checks(seed=0):
    rng = np.random.default_rng(seed)
    checks = []

    worst = 0.0
    for _ in range(10):
        a = rng.normal(size=(int(rng.integers(5, 40)), 3))
        b = rng.normal(size=(int(rng.integers(5, 40)), 3))
        worst = max(worst, abs(geometry.chamfer_sq(a, b) - chamfer_sq_brute(a, b)))
        worst = max(worst, abs(geometry.chamfer_l1(a, b) - chamfer_l1_brute(a, b)))
    checks.append(Check("chamfer_vs_double_loop", "<=1e-12", worst, worst <= 1e-12))

    worst_gap = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 8))
        costs = rng.normal(size=(n, n)) * 10
        gap = abs(assignment.assignment_cost(costs, assignment.hungarian(costs))
                  - assignment.assignment_cost(costs, assignment.brute_force_assignment(costs)))
        worst_gap = max(worst_gap, gap)
    checks.append(Check("hungarian_vs_enumeration", "=0", worst_gap, worst_gap == 0.0))

    # fps spreads at least as well as random subsets
    pts = rng.normal(size=(120, 3))
    sub = geometry.fps(pts, 12, start=0)
    fps_min = min_pairwise_distance(sub)
    rand_best = max(
        min_pairwise_distance(pts[rng.choice(120, size=12, replace=False)])
        for _ in range(100))
    margin = fps_min - rand_best
    checks.append(Check("fps_vs_random_subsets", ">=0", margin, margin >= 0.0))

    # occlusion: a part strictly behind another renders empty
    front = rng.uniform(-0.3, 0.3, size=(200, 3))
    front[:, 2] = 1.0
    back = front.copy()
    back[:, 2] = 0.0
    masks, bg, _, _ = geometry.rasterize_masks([front, back], 16, 0.5)
    hidden = float(masks[1].sum())
    checks.append(Check("zbuffer_occlusion", "=0", hidden, hidden == 0.0))

    # backend agreement when both implementations exist
    if "numba" in kernels.IMPLEMENTATIONS and "numpy" in kernels.IMPLEMENTATIONS:
        nb = kernels.IMPLEMENTATIONS["numba"]
        npk = kernels.IMPLEMENTATIONS["numpy"]
        a = rng.normal(size=(60, 3))
        b = rng.normal(size=(45, 3))
        d1, i1 = nb.nearest_sq(a, b)
        d2, i2 = npk.nearest_sq(a, b)
        gap = float(np.abs(d1 - d2).max() + np.abs(i1 - i2).max())
        f1 = nb.fps(a, 10, 0)
        f2 = npk.fps(a, 10, 0)
        gap += float(np.abs(f1 - f2).max())
        o1, z1 = nb.zbuffer(a, np.zeros(60, dtype=np.int64), 8, 3.0)
        o2, z2 = npk.zbuffer(a, np.zeros(60, dtype=np.int64), 8, 3.0)
        gap += float(np.abs(o1 - o2).max())
        checks.append(Check("backend_agreement", "=0", gap, gap == 0.0))
    return checks
