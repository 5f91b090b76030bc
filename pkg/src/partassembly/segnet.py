"""Part-instance mask grounding.

Each part gets a context-aware 3D feature built from three pieces: a
permutation-invariant point encoder (shared per-point MLP + channelwise
max), an instance one-hot that separates identical parts, and a shared
global context pooled across all parts of the shape. Conditioned on that
feature and a bottleneck encoding of the rendered view, a per-part decoder
emits an m x m mask logit grid; a background head runs from the view
encoding alone; a softmax across the N+1 grids enforces that the masks
partition every pixel.

The view encoder is convolution-free at this scale: non-overlapping
patches are flattened, embedded by a shared linear layer, and merged by a
second one.
"""

import time
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import losses
from .autodiff import Adam, Tape, Tensor, init_linear, ops
from .common import DivergenceError, check_finite_loss
from .parts import P_MAX


@dataclass
class SegConfig:
    m: int = 32
    f2: int = 64            # part feature width
    f1: int = 128           # view bottleneck width
    dec_hidden: int = 128
    patch: int = 4
    pn_hidden: int = 32     # point encoder hidden width
    p_max: int = P_MAX


@dataclass
class PartContext:
    geometry: object        # Tensor, f2
    onehot: np.ndarray      # p_max
    local: object           # Tensor, f2
    global_feat: object     # Tensor, f2 (shared across the shape)
    combined: object        # Tensor, 2*f2


def input_channels(record):
    """Network view input: silhouette + per-record normalized depth."""
    depth = record.depth
    covered = np.isfinite(depth)
    sil = covered.astype(np.float64)
    norm = np.zeros_like(sil)
    if covered.any():
        z = depth[covered]
        span = z.max() - z.min()
        norm[covered] = 1.0 if span <= 1e-12 else (z - z.min()) / span
    return np.stack([sil, norm])


def grid_to_patches(channels, patch):
    """(C, m, m) -> (n_patches, C*patch*patch), row-major patch order."""
    c, m, _ = channels.shape
    if m % patch:
        raise ValueError(f"grid size {m} not divisible by patch {patch}")
    g = channels.reshape(c, m // patch, patch, m // patch, patch)
    g = g.transpose(1, 3, 0, 2, 4)
    return g.reshape((m // patch) ** 2, c * patch * patch)


class GridEncoder:
    """Patch-flattening encoder: shared patch embedding, then a merge layer."""

    def __init__(self, rng, name, m, channels, patch, embed, out_dim):
        self.name = name
        self.m = m
        self.channels = channels
        self.patch = patch
        n_patches = (m // patch) ** 2
        self.w_patch, self.b_patch = init_linear(rng, channels * patch * patch, embed)
        self.w_out, self.b_out = init_linear(rng, n_patches * embed, out_dim)

    def params(self):
        return OrderedDict([
            (f"{self.name}/patch_w", self.w_patch),
            (f"{self.name}/patch_b", self.b_patch),
            (f"{self.name}/out_w", self.w_out),
            (f"{self.name}/out_b", self.b_out),
        ])

    def forward(self, grid):
        patches = Tensor(grid_to_patches(np.asarray(grid, dtype=np.float64), self.patch))
        h = ops.relu(ops.linear_rows(patches, self.w_patch, self.b_patch))
        return ops.relu(ops.linear(ops.flatten(h), self.w_out, self.b_out))


class SegNet:
    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.pn_w0, self.pn_b0 = init_linear(rng, 3, cfg.pn_hidden)
        self.pn_w1, self.pn_b1 = init_linear(rng, cfg.pn_hidden, cfg.f2)
        self.local_w, self.local_b = init_linear(rng, cfg.f2 + cfg.p_max, cfg.f2)
        self.global_w, self.global_b = init_linear(rng, cfg.f2, cfg.f2)
        self.view = GridEncoder(rng, "seg/view", cfg.m, 2, cfg.patch,
                                embed=16, out_dim=cfg.f1)
        self.dec_w0, self.dec_b0 = init_linear(rng, cfg.f1 + 2 * cfg.f2, cfg.dec_hidden)
        self.dec_w1, self.dec_b1 = init_linear(rng, cfg.dec_hidden, cfg.m * cfg.m)
        self.bg_w0, self.bg_b0 = init_linear(rng, cfg.f1, cfg.dec_hidden)
        self.bg_w1, self.bg_b1 = init_linear(rng, cfg.dec_hidden, cfg.m * cfg.m)

    def params(self):
        out = OrderedDict([
            ("seg/pn_w0", self.pn_w0), ("seg/pn_b0", self.pn_b0),
            ("seg/pn_w1", self.pn_w1), ("seg/pn_b1", self.pn_b1),
            ("seg/local_w", self.local_w), ("seg/local_b", self.local_b),
            ("seg/global_w", self.global_w), ("seg/global_b", self.global_b),
        ])
        out.update(self.view.params())
        out.update([
            ("seg/dec_w0", self.dec_w0), ("seg/dec_b0", self.dec_b0),
            ("seg/dec_w1", self.dec_w1), ("seg/dec_b1", self.dec_b1),
            ("seg/bg_w0", self.bg_w0), ("seg/bg_b0", self.bg_b0),
            ("seg/bg_w1", self.bg_w1), ("seg/bg_b1", self.bg_b1),
        ])
        return out

    # -- features -----------------------------------------------------------

    def part_geometry_feature(self, cloud):
        """Shared per-point MLP + channelwise max: exactly permutation
        invariant and unchanged under point duplication."""
        cloud = np.asarray(cloud, dtype=np.float64)
        if cloud.shape[0] == 0:
            raise ValueError("empty part cloud")
        h = ops.relu(ops.linear_rows(Tensor(cloud), self.pn_w0, self.pn_b0))
        h = ops.relu(ops.linear_rows(h, self.pn_w1, self.pn_b1))
        return ops.max_over_rows(h)

    def context_features(self, record, use_global=True):
        """Per-part context features for one shape.

        The local feature mixes geometry with the instance one-hot; the
        global feature max-pools locals across the shape, so two identical
        parts differ only through their one-hots while every part sees the
        same context.
        """
        if record.onehots is None:
            raise ValueError(f"{record.shape_id}: instance one-hots missing")
        geos = [self.part_geometry_feature(p.cloud) for p in record.parts]
        locals_ = [
            ops.relu(ops.linear(
                ops.concat([geo, Tensor(record.onehots[i])]),
                self.local_w, self.local_b))
            for i, geo in enumerate(geos)
        ]
        if use_global:
            pooled = ops.set_max_pool(locals_)
            global_feat = ops.relu(ops.linear(pooled, self.global_w, self.global_b))
        else:
            global_feat = Tensor(np.zeros(self.cfg.f2))
        return [
            PartContext(
                geometry=geos[i],
                onehot=record.onehots[i],
                local=locals_[i],
                global_feat=global_feat,
                combined=ops.concat([locals_[i], global_feat]),
            )
            for i in range(record.n_parts)
        ]

    # -- masks ---------------------------------------------------------------

    def predict_masks(self, record, contexts=None, use_global=True):
        """Soft masks for every part plus background (last entry).

        Each entry is a Tensor of m*m probabilities; across entries every
        pixel sums to 1.
        """
        if contexts is None:
            contexts = self.context_features(record, use_global=use_global)
        bottleneck = self.view.forward(input_channels(record))
        logits = []
        for ctx in contexts:
            h = ops.relu(ops.linear(ops.concat([bottleneck, ctx.combined]),
                                    self.dec_w0, self.dec_b0))
            logits.append(ops.linear(h, self.dec_w1, self.dec_b1))
        hb = ops.relu(ops.linear(bottleneck, self.bg_w0, self.bg_b0))
        logits.append(ops.linear(hb, self.bg_w1, self.bg_b1))
        return ops.softmax_over_set(logits)


def train_seg(net, records, epochs, lr, seed, log_every=0):
    """Minimize the matched negative soft-IoU over the given records.

    Deterministic under a fixed seed; aborts with DivergenceError on a
    non-finite loss. Returns per-epoch (epoch, mean_loss, seconds) rows.
    """
    opt = Adam(net.params(), lr=lr)
    rng = np.random.default_rng(seed)
    curve = []
    for epoch in range(epochs):
        t0 = time.time()
        order = rng.permutation(len(records))
        total = 0.0
        for k in order:
            rec = records[int(k)]
            with Tape() as tape:
                masks = net.predict_masks(rec)
                loss, _per_part, _matching = losses.soft_iou_loss(masks[:-1], rec)
            check_finite_loss(float(loss.data), f"seg epoch {epoch}")
            opt.zero_grad()
            tape.backward(loss)
            opt.step()
            total += float(loss.data)
        mean = total / max(len(records), 1)
        curve.append((epoch, mean, time.time() - t0))
        if log_every and epoch % log_every == 0:
            print(f"[seg] epoch {epoch}: mean soft-iou loss {mean:.4f}")
    return curve


def overfit_seg(net, record, steps, lr=3e-3):
    """Drive the net onto a single shape; returns the final mean soft-IoU."""
    opt = Adam(net.params(), lr=lr)
    last = 0.0
    for _step in range(steps):
        with Tape() as tape:
            masks = net.predict_masks(record)
            loss, _pp, _m = losses.soft_iou_loss(masks[:-1], record)
        check_finite_loss(float(loss.data), "seg overfit")
        opt.zero_grad()
        tape.backward(loss)
        opt.step()
        last = float(loss.data)
    return last
