"""Hungarian solver against the exhaustive oracle, plus class-wise matching."""

import numpy as np
import pytest

from partassembly.assignment import (assignment_cost, brute_force_assignment,
                                     hungarian, match_within_classes)


def test_identity_optimal():
    assert np.array_equal(hungarian([[0.0, 1.0], [1.0, 0.0]]), [0, 1])


def test_swap_optimal():
    col = hungarian([[4.0, 1.0], [2.0, 3.0]])
    assert np.array_equal(col, [1, 0])
    assert assignment_cost([[4.0, 1.0], [2.0, 3.0]], col) == 3.0


def test_hungarian_vs_brute_force_200_random_7x7():
    rng = np.random.default_rng(42)
    for _ in range(200):
        costs = rng.normal(size=(7, 7)) * 10
        h = hungarian(costs)
        b = brute_force_assignment(costs)
        assert assignment_cost(costs, h) == assignment_cost(costs, b)
        assert sorted(h) == list(range(7))


def test_hungarian_vs_brute_force_with_ties():
    rng = np.random.default_rng(43)
    for _ in range(100):
        n = int(rng.integers(1, 8))
        costs = np.round(rng.normal(size=(n, n)) * 2)  # heavy ties
        assert assignment_cost(costs, hungarian(costs)) == \
            assignment_cost(costs, brute_force_assignment(costs))


def test_row_constant_shift_preserves_optimum():
    rng = np.random.default_rng(44)
    costs = rng.normal(size=(5, 5))
    base_col = hungarian(costs)
    base_cost = assignment_cost(costs, base_col)
    shifted = costs.copy()
    shifted[2] += 3.5
    col = hungarian(shifted)
    assert abs(assignment_cost(shifted, col) - (base_cost + 3.5)) < 1e-9
    # the returned permutation is optimal for the shifted matrix too
    assert assignment_cost(shifted, col) == \
        assignment_cost(shifted, brute_force_assignment(shifted))


def test_nan_rejected():
    with pytest.raises(ValueError):
        hungarian([[np.nan, 1.0], [1.0, 0.0]])
    with pytest.raises(ValueError):
        hungarian([[np.inf, 1.0], [1.0, 0.0]])


def test_non_square_rejected():
    with pytest.raises(ValueError):
        hungarian(np.zeros((2, 3)))


def test_brute_force_1x1():
    assert np.array_equal(brute_force_assignment([[5.0]]), [0])


def test_brute_force_identity_matrix():
    costs = np.ones((4, 4)) - np.eye(4)
    assert np.array_equal(brute_force_assignment(costs), [0, 1, 2, 3])


def test_brute_force_tie_lexicographic():
    costs = np.zeros((3, 3))  # every permutation costs 0
    assert np.array_equal(brute_force_assignment(costs), [0, 1, 2])


def test_brute_force_size_cap():
    with pytest.raises(ValueError):
        brute_force_assignment(np.zeros((9, 9)))


# -- class-wise matching ---------------------------------------------------------

def test_singletons_map_identically():
    classes = [[0], [1], [2]]
    matching = match_within_classes(classes, lambda p, g: 1.0)
    assert np.array_equal(matching, [0, 1, 2])


def test_swapped_pair_recovered():
    # prediction 0 matches GT 1 and vice versa
    cost = {(0, 0): 5.0, (0, 1): 0.1, (1, 0): 0.2, (1, 1): 7.0}
    matching = match_within_classes([[0, 1]], lambda p, g: cost[(p, g)])
    assert np.array_equal(matching, [1, 0])


def test_matching_is_bijection():
    rng = np.random.default_rng(7)
    classes = [[0, 3, 5], [1, 2], [4]]
    costs = rng.normal(size=(6, 6))
    matching = match_within_classes(classes, lambda p, g: costs[p, g])
    assert sorted(matching) == list(range(6))
    # never matches across classes
    cls_of = {m: i for i, c in enumerate(classes) for m in c}
    for gi, pi in enumerate(matching):
        assert cls_of[gi] == cls_of[pi]


def test_incomplete_classes_rejected():
    with pytest.raises(ValueError):
        match_within_classes([[0], [2]], lambda p, g: 0.0)
