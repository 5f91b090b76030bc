"""Mask-conditioned part features and two-stage graph convolution emitting
6-DoF part poses.

Per part, three feature sources are concatenated into the initial node
feature: an encoding of the rendered view (shared by all parts of a shape),
an encoding of the part's own predicted mask, and the context-aware 3D
feature produced by the frozen segmentation module.

Stage 1 passes messages along edges drawn between all ordered pairs within
each geometric equivalence class; decoded poses give an initial assembly.
Stage 2 adds edges to each part's k nearest neighbors in that assembly
(symmetrized), tags edges with a 0/1 "spatial neighbor" channel, and passes
messages again. Each stage runs two message-passing iterations:

    edge   e_{t+1}(i, j) = relu(SLP([f_t(i); f_t(j); e_t(i, j)]))
    node   f_{t+1}(i)    = mean of e_{t+1}(i, *) over edges leaving i,
                           or f_t(i) when i has no edge

and decodes a unit quaternion + translation per part from [f0; f1; f2]
through a shared two-head MLP. Stage 1 omits the edge channel on the first
iteration (its edges carry no initial feature). Loss supervises both
stages; stage 2 is the model output.
"""

import time
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import losses, segnet
from .autodiff import Adam, Tape, Tensor, init_linear, ops
from .common import check_finite_loss

ABLATION_FLAGS = ("l2rot", "seg", "gconv1", "gconv2", "img", "global")


@dataclass
class PoseConfig:
    m: int = 32
    f2: int = 64              # must match the seg module's part feature width
    f3: int = 64              # view / mask encoder output width
    pose_hidden: int = 128
    patch: int = 4
    k_neighbors: int = 5
    iterations: int = 2
    ablate: tuple = ()

    def __post_init__(self):
        bad = set(self.ablate) - set(ABLATION_FLAGS)
        if bad:
            raise ValueError(f"unknown ablation flags {sorted(bad)}")

    @property
    def node_dim(self):
        return 2 * self.f3 + 2 * self.f2

    def ablated(self, flag):
        return flag in self.ablate


@dataclass
class SegCache:
    """Frozen per-shape outputs of the segmentation stage."""
    context: np.ndarray       # (N, 2*f2) context-aware 3D features
    masks: np.ndarray         # (N, m, m) soft masks fed to the mask encoder


@dataclass
class PoseForward:
    stage1_q: list
    stage1_t: list
    stage2_q: list = None
    stage2_t: list = None
    class_edges: np.ndarray = None
    neighbor_edges: np.ndarray = None

    @property
    def output_q(self):
        return self.stage2_q if self.stage2_q is not None else self.stage1_q

    @property
    def output_t(self):
        return self.stage2_t if self.stage2_t is not None else self.stage1_t


def build_seg_cache(seg, records, use_gt_masks=False, zero_masks=False,
                    use_global=True):
    """Forward the frozen seg module over records (no tape, no gradients)."""
    cache = {}
    for rec in records:
        contexts = seg.context_features(rec, use_global=use_global)
        ctx = np.stack([c.combined.data for c in contexts])
        m = rec.camera.m
        if zero_masks:
            masks = np.zeros((rec.n_parts, m, m))
        elif use_gt_masks:
            masks = rec.masks.astype(np.float64)
        else:
            # part i's mask is the one its own conditional decoder emitted;
            # ground truth plays no role here, matching lives in the losses
            soft = seg.predict_masks(rec, contexts=contexts)
            masks = np.stack([
                soft[i].data.reshape(m, m) for i in range(rec.n_parts)
            ])
        cache[rec.shape_id] = SegCache(context=ctx, masks=masks)
    return cache


def class_edge_list(classes):
    """All ordered within-class pairs (both directions, no self edges)."""
    edges = []
    for members in classes:
        ids = sorted(members)
        for a in ids:
            for b in ids:
                if a != b:
                    edges.append((a, b))
    edges.sort()
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def neighbor_edge_list(centers, k):
    """Symmetrized k-nearest-neighbor edges over predicted part centers.

    k is capped at N-1; ties in distance break toward the lower index.
    """
    n = centers.shape[0]
    k = min(k, n - 1)
    pairs = set()
    if k <= 0:
        return np.zeros((0, 2), dtype=np.int64)
    for i in range(n):
        d = np.linalg.norm(centers - centers[i], axis=1)
        order = sorted((float(d[j]), j) for j in range(n) if j != i)
        for _dist, j in order[:k]:
            pairs.add((i, j))
            pairs.add((j, i))
    edges = sorted(pairs)
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def merge_edge_sets(class_edges, neighbor_edges):
    """Union of the two edge sets with the 0/1 spatial-neighbor channel:
    an edge carries 1 iff it is a neighbor edge, 0 if drawn only by class
    membership."""
    merged = {tuple(e) for e in class_edges}
    in_neighbor = {tuple(e) for e in neighbor_edges}
    merged |= in_neighbor
    edges = np.array(sorted(merged), dtype=np.int64).reshape(-1, 2)
    flags = np.array([1.0 if tuple(e) in in_neighbor else 0.0 for e in edges])
    return edges, flags


class PoseNet:
    def __init__(self, cfg, rng):
        self.cfg = cfg
        d0 = cfg.node_dim
        self.view = segnet.GridEncoder(rng, "pose/view", cfg.m, 2, cfg.patch,
                                       embed=16, out_dim=cfg.f3)
        self.mask_enc = segnet.GridEncoder(rng, "pose/mask", cfg.m, 1, cfg.patch,
                                           embed=16, out_dim=cfg.f3)
        # per-stage, per-iteration edge MLPs; input arity differs so weights
        # cannot be shared across iterations
        self.edge_w = {}
        self.edge_b = {}
        for stage in (1, 2):
            for it in range(cfg.iterations):
                if it == 0:
                    n_in = 2 * d0 + (1 if stage == 2 else 0)
                else:
                    n_in = 3 * d0
                w, b = init_linear(rng, n_in, d0)
                self.edge_w[(stage, it)] = w
                self.edge_b[(stage, it)] = b
        self.dec_w = {}
        self.dec_b = {}
        for stage in (1, 2):
            w0, b0 = init_linear(rng, 3 * d0, cfg.pose_hidden)
            wq, bq = init_linear(rng, cfg.pose_hidden, 4)
            wt, bt = init_linear(rng, cfg.pose_hidden, 3)
            self.dec_w[stage] = (w0, wq, wt)
            self.dec_b[stage] = (b0, bq, bt)

    def params(self):
        out = OrderedDict()
        out.update(self.view.params())
        out.update(self.mask_enc.params())
        for stage in (1, 2):
            for it in range(self.cfg.iterations):
                out[f"pose/edge{stage}_{it}_w"] = self.edge_w[(stage, it)]
                out[f"pose/edge{stage}_{it}_b"] = self.edge_b[(stage, it)]
        for stage in (1, 2):
            w0, wq, wt = self.dec_w[stage]
            b0, bq, bt = self.dec_b[stage]
            out[f"pose/dec{stage}_w0"] = w0
            out[f"pose/dec{stage}_b0"] = b0
            out[f"pose/dec{stage}_wq"] = wq
            out[f"pose/dec{stage}_bq"] = bq
            out[f"pose/dec{stage}_wt"] = wt
            out[f"pose/dec{stage}_bt"] = bt
        return out

    # -- node features -------------------------------------------------------

    def encode_part_inputs(self, record, cache):
        """Initial node features [view; own mask; 3D context] per part."""
        cfg = self.cfg
        n = record.n_parts
        if cache.masks is None or cache.masks.shape[0] != n:
            have = None if cache.masks is None else cache.masks.shape[0]
            raise ValueError(
                f"{record.shape_id}: seg cache has masks for {have} parts, "
                f"need {n} (run the seg stage or enable the seg ablation)")
        if cfg.ablated("img"):
            view_feat = Tensor(np.zeros(cfg.f3))
        else:
            view_feat = self.view.forward(segnet.input_channels(record))
        rows = []
        for i in range(n):
            mask_feat = self.mask_enc.forward(cache.masks[i][None])
            rows.append(ops.concat([view_feat, mask_feat, Tensor(cache.context[i])]))
        return ops.stack_rows(rows)

    # -- message passing -----------------------------------------------------

    def message_pass(self, nodes, edges, stage, edge_flags=None):
        """Two iterations of edge-then-node updates; returns [f0; f1; f2].

        Isolated nodes carry their feature through unchanged, so with no
        edges the result is three copies of the input. Per-node means run
        over edge features sorted by content, which makes the aggregation
        independent of part numbering (exact permutation equivariance).
        """
        n = nodes.shape[0]
        feats = [nodes]
        cur = nodes
        if edges.shape[0] == 0:
            for _ in range(self.cfg.iterations):
                feats.append(cur)
            return ops.hconcat(feats)
        out_edges = [np.nonzero(edges[:, 0] == i)[0] for i in range(n)]
        prev_edge = None
        for it in range(self.cfg.iterations):
            src = ops.gather_rows(cur, edges[:, 0])
            dst = ops.gather_rows(cur, edges[:, 1])
            pieces = [src, dst]
            if it == 0:
                if stage == 2:
                    pieces.append(Tensor(edge_flags[:, None]))
            else:
                pieces.append(prev_edge)
            edge_feat = ops.relu(ops.linear_rows(
                ops.hconcat(pieces), self.edge_w[(stage, it)], self.edge_b[(stage, it)]))
            rows = []
            for i in range(n):
                idx = out_edges[i]
                if idx.size == 0:
                    rows.append(ops.row(cur, i))
                else:
                    vals = edge_feat.data[idx]
                    order = np.lexsort(vals.T[::-1])
                    rows.append(ops.mean_rows(ops.gather_rows(edge_feat, idx[order])))
            cur = ops.stack_rows(rows)
            feats.append(cur)
            prev_edge = edge_feat
        return ops.hconcat(feats)

    def decode(self, final, stage):
        """Shared MLP heads -> unit quaternions and translations per part."""
        w0, wq, wt = self.dec_w[stage]
        b0, bq, bt = self.dec_b[stage]
        h = ops.relu(ops.linear_rows(final, w0, b0))
        q_raw = ops.linear_rows(h, wq, bq)
        t_out = ops.linear_rows(h, wt, bt)
        n = final.shape[0]
        qs = [ops.l2_normalize(ops.row(q_raw, i)) for i in range(n)]
        ts = [ops.row(t_out, i) for i in range(n)]
        return qs, ts

    # -- full forward ----------------------------------------------------------

    def forward_two_stage(self, record, cache):
        cfg = self.cfg
        nodes = self.encode_part_inputs(record, cache)
        if cfg.ablated("gconv1"):
            class_edges = np.zeros((0, 2), dtype=np.int64)
        else:
            class_edges = class_edge_list(record.class_id_lists())
        final1 = self.message_pass(nodes, class_edges, stage=1)
        q1, t1 = self.decode(final1, stage=1)
        result = PoseForward(stage1_q=q1, stage1_t=t1, class_edges=class_edges)
        if cfg.ablated("gconv2"):
            return result
        centers = np.stack([t.data for t in t1])
        neighbor_edges = neighbor_edge_list(centers, cfg.k_neighbors)
        edges2, flags = merge_edge_sets(class_edges, neighbor_edges)
        final2 = self.message_pass(nodes, edges2, stage=2, edge_flags=flags)
        q2, t2 = self.decode(final2, stage=2)
        result.stage2_q = q2
        result.stage2_t = t2
        result.neighbor_edges = neighbor_edges
        return result

    def predict(self, record, cache):
        """Forward without a tape; returns (N, 4) and (N, 3) numpy poses."""
        fwd = self.forward_two_stage(record, cache)
        q = np.stack([t.data for t in fwd.output_q])
        t = np.stack([t.data for t in fwd.output_t])
        return q, t


def stage_losses(fwd, record, weights, include_rotation_l2):
    """Pose loss applied to each decoded stage; both supervise training."""
    total, breakdown, _ = losses.total_pose_loss(
        fwd.stage1_q, fwd.stage1_t, record, weights,
        include_rotation_l2=include_rotation_l2)
    if fwd.stage2_q is not None:
        total2, breakdown2, _ = losses.total_pose_loss(
            fwd.stage2_q, fwd.stage2_t, record, weights,
            include_rotation_l2=include_rotation_l2)
        total = ops.add(total, total2)
        breakdown = {k: breakdown[k] + breakdown2[k] for k in breakdown}
    return total, breakdown


def train_pose(net, seg_cache, records, epochs, lr, seed, weights=None,
               log_every=0):
    """Adam training of the pose module against both decoded stages.

    The segmentation module is frozen: its masks and context features come
    precomputed through ``seg_cache``. Deterministic per seed.
    """
    weights = weights or losses.LossWeights()
    include_l2 = not net.cfg.ablated("l2rot")
    opt = Adam(net.params(), lr=lr)
    rng = np.random.default_rng(seed)
    curve = []
    for epoch in range(epochs):
        t0 = time.time()
        order = rng.permutation(len(records))
        sums = {"total": 0.0, "translation": 0.0, "rotation_chamfer": 0.0,
                "rotation_l2": 0.0, "assembly": 0.0}
        for k in order:
            rec = records[int(k)]
            with Tape() as tape:
                fwd = net.forward_two_stage(rec, seg_cache[rec.shape_id])
                loss, breakdown = stage_losses(fwd, rec, weights, include_l2)
            check_finite_loss(float(loss.data), f"pose epoch {epoch}")
            opt.zero_grad()
            tape.backward(loss)
            opt.step()
            sums["total"] += float(loss.data)
            for key in breakdown:
                sums[key] += breakdown[key]
        n = max(len(records), 1)
        curve.append((epoch, sums["total"] / n, sums["translation"] / n,
                      sums["rotation_chamfer"] / n, sums["rotation_l2"] / n,
                      sums["assembly"] / n, time.time() - t0))
        if log_every and epoch % log_every == 0:
            print(f"[pose] epoch {epoch}: loss {sums['total'] / n:.4f}")
    return curve
