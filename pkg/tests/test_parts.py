"""Equivalence-class detection, instance one-hots, and dataset round trips."""

import numpy as np
import pytest

from partassembly import dataset as dataset_mod
from partassembly import geometry as geo
from partassembly.parts import (Part, build_instance_onehots,
                                detect_equivalence_classes)


def _box_cloud(rng, dims, n=80):
    pts = rng.uniform(-0.5, 0.5, size=(n, 3)) * np.asarray(dims)
    canon, _, _ = geo.pca_canonicalize(pts)
    return canon


def _partition(classes):
    return sorted(sorted(c.member_ids) for c in classes)


def test_identical_cubes_vs_box(rng):
    cube = _box_cloud(rng, (0.3, 0.3, 0.3))
    box = _box_cloud(rng, (0.6, 0.3, 0.3))
    ps = [Part.from_cloud(0, cube), Part.from_cloud(1, cube.copy()),
          Part.from_cloud(2, box)]
    classes = detect_equivalence_classes(ps)
    assert _partition(classes) == [[0, 1], [2]]


def test_all_distinct_parts_singletons(rng):
    ps = [Part.from_cloud(i, _box_cloud(rng, (0.2 + 0.15 * i, 0.2, 0.1)))
          for i in range(4)]
    classes = detect_equivalence_classes(ps)
    assert _partition(classes) == [[0], [1], [2], [3]]


def test_noisy_copies_one_class(rng):
    leg = _box_cloud(rng, (0.08, 0.08, 0.5), n=120)
    ps = []
    for i in range(4):
        noisy = leg + rng.normal(scale=1e-4, size=leg.shape)
        ps.append(Part.from_cloud(i, noisy))
    classes = detect_equivalence_classes(ps)
    assert _partition(classes) == [[0, 1, 2, 3]]
    # every within-class pair satisfies the normalized chamfer gate
    for i in range(4):
        for j in range(i + 1, 4):
            diag = 0.5 * (ps[i].aabb.diagonal + ps[j].aabb.diagonal)
            assert geo.chamfer_l1(ps[i].cloud, ps[j].cloud) / diag < 0.02


def test_detection_order_invariant(rng):
    leg = _box_cloud(rng, (0.1, 0.1, 0.5))
    seat = _box_cloud(rng, (0.5, 0.5, 0.08))
    clouds = [leg, seat, leg.copy(), leg.copy()]
    base = detect_equivalence_classes(
        [Part.from_cloud(i, c) for i, c in enumerate(clouds)])
    base_sets = {frozenset(c.member_ids) for c in base}
    perm = [2, 0, 3, 1]
    shuffled = detect_equivalence_classes(
        [Part.from_cloud(i, clouds[p]) for i, p in enumerate(perm)])
    remapped = {
        frozenset(perm[m] for m in c.member_ids) for c in shuffled
    }
    assert base_sets == remapped


def test_representative_is_lowest_id(rng):
    leg = _box_cloud(rng, (0.1, 0.1, 0.4))
    ps = [Part.from_cloud(i, leg.copy()) for i in range(3)]
    classes = detect_equivalence_classes(ps)
    assert np.array_equal(classes[0].representative, ps[0].cloud)


def test_onehots_class_of_four():
    classes = detect_equivalence_classes(
        [Part.from_cloud(i, _box_cloud(np.random.default_rng(0), (0.1, 0.1, 0.4)))
         for i in range(4)])
    oh = build_instance_onehots(classes, 4)
    assert oh.shape == (4, 20)
    assert np.array_equal(oh[:, :4], np.eye(4))
    assert (oh.sum(axis=1) == 1).all()


def test_onehot_singleton_first_position(rng):
    ps = [Part.from_cloud(0, _box_cloud(rng, (0.5, 0.3, 0.1)))]
    classes = detect_equivalence_classes(ps)
    oh = build_instance_onehots(classes, 1)
    assert oh[0, 0] == 1.0
    assert oh[0].sum() == 1.0


def test_onehot_class_too_large():
    from partassembly.parts import EquivalenceClass
    cls = EquivalenceClass(0, list(range(21)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        build_instance_onehots([cls], 21)


def test_generated_shape_classes_partition(table_record):
    covered = sorted(i for c in table_record.classes for i in c.member_ids)
    assert covered == list(range(table_record.n_parts))
    # members of one class are chamfer-close
    for cls in table_record.classes:
        for i in cls.member_ids:
            for j in cls.member_ids:
                if i < j:
                    a, b = table_record.parts[i], table_record.parts[j]
                    diag = 0.5 * (a.aabb.diagonal + b.aabb.diagonal)
                    assert geo.chamfer_l1(a.cloud, b.cloud) / diag < 0.02


def test_record_serialization_roundtrip(tmp_path, table_record):
    row = dataset_mod.save_record(table_record, tmp_path)
    loaded = dataset_mod.load_record(row, tmp_path)
    assert loaded.shape_id == table_record.shape_id
    assert loaded.n_parts == table_record.n_parts
    for a, b in zip(loaded.parts, table_record.parts):
        assert np.array_equal(a.cloud, b.cloud)
    for a, b in zip(loaded.poses, table_record.poses):
        assert np.array_equal(a.rotation, b.rotation)
        assert np.array_equal(a.translation, b.translation)
    assert np.array_equal(loaded.masks, table_record.masks)
    assert np.array_equal(loaded.background, table_record.background)
    assert np.array_equal(loaded.depth, table_record.depth)
    assert loaded.class_id_lists() == table_record.class_id_lists()


def test_blob_roundtrips(tmp_path, rng):
    cloud = rng.normal(size=(37, 3))
    dataset_mod.write_cloud(tmp_path / "c.bin", cloud)
    assert np.array_equal(dataset_mod.read_cloud(tmp_path / "c.bin"), cloud)
    masks = rng.random((5, 12, 12)) > 0.6
    dataset_mod.write_masks(tmp_path / "m.bin", masks)
    assert np.array_equal(dataset_mod.read_masks(tmp_path / "m.bin"), masks)
    grid = rng.normal(size=(9, 9))
    grid[0, 0] = -np.inf
    dataset_mod.write_grid(tmp_path / "g.bin", grid)
    assert np.array_equal(dataset_mod.read_grid(tmp_path / "g.bin"), grid)
