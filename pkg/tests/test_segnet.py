"""Mask module: point-encoder symmetries, context features, disjointness,
equivariance, and the single-shape overfit behaviour."""

import numpy as np
import pytest

from partassembly.datagen import SyntheticSpec, generate_shape
from partassembly.segnet import (SegConfig, SegNet, grid_to_patches,
                                 input_channels, overfit_seg, train_seg)


@pytest.fixture(scope="module")
def net():
    cfg = SegConfig(m=24, f2=24, f1=48, dec_hidden=48, pn_hidden=12)
    return SegNet(cfg, np.random.default_rng(0))


@pytest.fixture(scope="module")
def record():
    return generate_shape(SyntheticSpec(template="table", d_pc=100, m=24), 11)


def test_point_encoder_permutation_invariant(net, rng):
    cloud = rng.normal(size=(40, 3))
    a = net.part_geometry_feature(cloud).data
    b = net.part_geometry_feature(cloud[rng.permutation(40)]).data
    assert np.array_equal(a, b)


def test_point_encoder_duplication_invariant(net, rng):
    cloud = rng.normal(size=(30, 3))
    a = net.part_geometry_feature(cloud).data
    b = net.part_geometry_feature(np.concatenate([cloud, cloud])).data
    assert np.array_equal(a, b)


def test_point_encoder_rejects_empty(net):
    with pytest.raises(ValueError):
        net.part_geometry_feature(np.zeros((0, 3)))


def test_point_encoder_distinguishes_clouds(net):
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        a = net.part_geometry_feature(rng.normal(size=(20, 3))).data
        b = net.part_geometry_feature(rng.normal(size=(20, 3))).data
        if not np.allclose(a, b, atol=1e-9):
            hits += 1
    assert hits == 100


def test_identical_parts_differ_only_by_onehot(net, record):
    ctxs = net.context_features(record)
    big = next(c for c in record.classes if len(c) > 1)
    i, j = sorted(big.member_ids)[:2]
    assert np.array_equal(ctxs[i].geometry.data, ctxs[j].geometry.data)
    assert not np.array_equal(ctxs[i].onehot, ctxs[j].onehot)
    assert not np.array_equal(ctxs[i].local.data, ctxs[j].local.data)
    assert np.array_equal(ctxs[i].global_feat.data, ctxs[j].global_feat.data)


def test_context_permutation_equivariance(net, record):
    import copy
    ctxs = net.context_features(record)
    perm = list(reversed(range(record.n_parts)))
    permuted = copy.copy(record)
    permuted.parts = [record.parts[p] for p in perm]
    permuted.onehots = record.onehots[perm]
    ctxs_p = net.context_features(permuted)
    for new_idx, old_idx in enumerate(perm):
        assert np.array_equal(ctxs_p[new_idx].local.data, ctxs[old_idx].local.data)
    assert np.array_equal(ctxs_p[0].global_feat.data, ctxs[0].global_feat.data)


def test_mask_prediction_permutation_equivariant(net, record):
    import copy
    base = [m.data.copy() for m in net.predict_masks(record)]
    perm = list(reversed(range(record.n_parts)))
    permuted = copy.copy(record)
    permuted.parts = [record.parts[p] for p in perm]
    permuted.onehots = record.onehots[perm]
    out = [m.data for m in net.predict_masks(permuted)]
    for new_idx, old_idx in enumerate(perm):
        assert np.array_equal(out[new_idx], base[old_idx])
    assert np.array_equal(out[-1], base[-1])  # background unchanged


def test_removing_part_changes_global(net, record):
    import copy
    full = net.context_features(record)[0].global_feat.data
    reduced = copy.copy(record)
    reduced.parts = record.parts[:-1]
    reduced.onehots = record.onehots[:-1]
    partial = net.context_features(reduced)[0].global_feat.data
    assert not np.array_equal(full, partial)


def test_masks_partition_unit(net, record):
    masks = net.predict_masks(record)
    assert len(masks) == record.n_parts + 1
    total = sum(m.data for m in masks)
    assert np.abs(total - 1.0).max() <= 1e-6


def test_no_parts_background_only(net, record):
    bottleneck = net.view.forward(input_channels(record))
    from partassembly.autodiff import ops
    h = ops.relu(ops.linear(bottleneck, net.bg_w0, net.bg_b0))
    logits = [ops.linear(h, net.bg_w1, net.bg_b1)]
    outs = ops.softmax_over_set(logits)
    assert np.allclose(outs[0].data, 1.0)


def test_same_geometry_different_masks(net, record):
    masks = net.predict_masks(record)
    big = next(c for c in record.classes if len(c) > 1)
    i, j = sorted(big.member_ids)[:2]
    assert not np.allclose(masks[i].data, masks[j].data)


def test_patch_grid_shapes():
    grid = np.arange(2 * 8 * 8, dtype=float).reshape(2, 8, 8)
    patches = grid_to_patches(grid, 4)
    assert patches.shape == (4, 32)
    with pytest.raises(ValueError):
        grid_to_patches(grid, 3)


def test_overfit_reaches_threshold(record):
    cfg = SegConfig(m=24, f2=24, f1=48, dec_hidden=48, pn_hidden=12)
    fresh = SegNet(cfg, np.random.default_rng(1))
    final = overfit_seg(fresh, record, steps=300, lr=3e-3)
    assert final <= -0.8
    # invisible parts must have learned (nearly) empty masks
    masks = [m.data for m in fresh.predict_masks(record)[:-1]]
    visible = record.visible_flags()
    m = record.camera.m
    for i, vis in enumerate(visible):
        if not vis:
            assert masks[i].sum() < 0.05 * m * m


def test_training_deterministic():
    records = [generate_shape(SyntheticSpec(template="table", d_pc=60, m=16), s)
               for s in range(3)]

    def run():
        cfg = SegConfig(m=16, f2=16, f1=32, dec_hidden=32, pn_hidden=8)
        net = SegNet(cfg, np.random.default_rng(5))
        curve = train_seg(net, records, epochs=2, lr=1e-3, seed=5)
        return [row[1] for row in curve]

    assert run() == run()


def test_loss_starts_small_and_decreases():
    records = [generate_shape(SyntheticSpec(template="table", d_pc=60, m=16), s)
               for s in range(6)]
    cfg = SegConfig(m=16, f2=16, f1=32, dec_hidden=32, pn_hidden=8)
    net = SegNet(cfg, np.random.default_rng(2))
    curve = train_seg(net, records, epochs=8, lr=2e-3, seed=2)
    first, last = curve[0][1], curve[-1][1]
    assert abs(first) < 0.5        # random soft masks barely overlap
    assert last < first            # trend improves
