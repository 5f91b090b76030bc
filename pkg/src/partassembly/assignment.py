"""Optimal bipartite matching for order-invariant losses and metrics.

``hungarian`` is the O(n^3) potentials / shortest-augmenting-path form of
the classic algorithm for square cost matrices. ``brute_force_assignment``
enumerates all permutations and is the test oracle for it.
"""

import itertools

import numpy as np


def hungarian(costs):
    """Column assignment per row minimizing the total cost.

    Returns an int array ``col`` with ``col[i]`` the column matched to row
    i; the assignment is a permutation. Costs must be square and finite.
    """
    costs = np.asarray(costs, dtype=np.float64)
    if costs.ndim != 2 or costs.shape[0] != costs.shape[1]:
        raise ValueError(f"cost matrix must be square, got {costs.shape}")
    if not np.all(np.isfinite(costs)):
        raise ValueError("cost matrix contains non-finite entries")
    n = costs.shape[0]
    # potentials u (rows), v (columns); p[j] = row matched to column j,
    # 1-based with column 0 as the virtual root
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = costs[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col[p[j] - 1] = j - 1
    return col


def assignment_cost(costs, col):
    costs = np.asarray(costs, dtype=np.float64)
    return float(costs[np.arange(len(col)), col].sum())


def brute_force_assignment(costs):
    """Exact minimum assignment by enumerating all n! permutations (n <= 8).

    Ties resolve to the lexicographically smallest permutation.
    """
    costs = np.asarray(costs, dtype=np.float64)
    n = costs.shape[0]
    if costs.ndim != 2 or costs.shape[0] != costs.shape[1]:
        raise ValueError(f"cost matrix must be square, got {costs.shape}")
    if n > 8:
        raise ValueError(f"brute force capped at n=8, got {n}")
    rows = np.arange(n)
    best_perm = None
    best_cost = np.inf
    for perm in itertools.permutations(range(n)):
        c = float(costs[rows, perm].sum())
        if c < best_cost:
            best_cost = c
            best_perm = perm
    return np.array(best_perm, dtype=np.int64)


def match_within_classes(classes, cost_fn):
    """Hungarian matching run independently inside each equivalence class.

    ``classes`` is a list of part-id lists partitioning 0..N-1, and
    ``cost_fn(pred_id, gt_id)`` prices assigning one prediction slot to one
    ground-truth slot. Returns ``pred_for_gt``: for every ground-truth part
    id, the prediction id serving it. Singleton classes map identically and
    the combined result is a bijection on part ids.
    """
    all_ids = sorted(i for c in classes for i in c)
    if all_ids != list(range(len(all_ids))):
        raise ValueError("classes do not partition part ids 0..N-1")
    pred_for_gt = np.full(len(all_ids), -1, dtype=np.int64)
    for members in classes:
        ids = sorted(members)
        if len(ids) == 1:
            pred_for_gt[ids[0]] = ids[0]
            continue
        costs = np.array([[cost_fn(pi, gi) for gi in ids] for pi in ids])
        col = hungarian(costs)
        for a, b in enumerate(col):
            pred_for_gt[ids[b]] = ids[a]
    return pred_for_gt
