"""Brute-force reference implementations used to check the fast paths."""

from collections import deque

import numpy as np


def brute_force_components(coords, radius, min_points):
    """Connected components of the radius graph from the full O(n²) distance matrix and breadth-first search."""
    coords = np.asarray(coords, dtype=float)
    n = len(coords)
    d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(axis=-1)
    adjacent = d2 <= radius * radius
    seen = np.zeros(n, dtype=bool)
    components = []
    for start in range(n):
        if seen[start]:
            continue
        seen[start] = True
        queue, members = deque([start]), []
        while queue:
            i = queue.popleft()
            members.append(i)
            for j in np.flatnonzero(adjacent[i] & ~seen):
                seen[j] = True
                queue.append(j)
        if len(members) >= min_points:
            components.append(frozenset(members))
    return set(components)


def brute_force_matches(gt, pred):
    """All (gt id, pred id, iou) with IoU > 0.5 from explicit point sets of every instance pair."""
    gt, pred = np.asarray(gt), np.asarray(pred)
    gt_sets = {int(g): set(np.flatnonzero(gt == g).tolist()) for g in np.unique(gt) if g != 0}
    pred_sets = {int(p): set(np.flatnonzero(pred == p).tolist()) for p in np.unique(pred) if p != 0}
    out = set()
    for g, a in gt_sets.items():
        for p, b in pred_sets.items():
            iou = len(a & b) / len(a | b)
            if iou > 0.5:
                out.add((g, p, iou))
    return out


def relabel_equal(a, b):
    """True if two instance maps are equal up to a bijective renaming of nonzero ids (0 stays 0)."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or not np.array_equal(a == 0, b == 0):
        return False
    forward, backward = {}, {}
    for x, y in zip(a.tolist(), b.tolist()):
        if forward.setdefault(x, y) != y or backward.setdefault(y, x) != x:
            return False
    return True


def random_instance_map(rng, n_points, n_instances, zero_fraction=0.2):
    ids = rng.integers(1, n_instances + 1, size=n_points)
    ids[rng.random(n_points) < zero_fraction] = 0
    return ids
