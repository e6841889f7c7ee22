"""Community detection on soft evidence graphs.

Noisy identification produces a symmetric weight matrix over items, with
entries in [0, 1] grading how confidently two items look nested together.
Communities are found by agglomerating short random walks: vertices whose
t-step walk distributions look alike get merged, and the merge sequence is
cut at the first strict modularity maximum.
"""

from __future__ import annotations

import numpy as np

from .model import NestPartition, singleton_partition

WALK_LENGTH = 4


def _validated_weights(weights: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError("weight matrix must be square")
    if not np.allclose(w, w.T, rtol=0.0, atol=1e-12):
        raise ValueError("weight matrix must be symmetric")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    w = w.copy()
    np.fill_diagonal(w, 0.0)
    return w


def modularity(
    weights: np.ndarray, communities: list[list[int]] | NestPartition
) -> float:
    """Newman-Girvan modularity of a grouping, on off-diagonal weights.

    communities hold 0-based vertex indices, or a NestPartition whose
    1-based nests are shifted down.  A graph with no edge weight at all
    scores 0.
    """
    if isinstance(communities, NestPartition):
        communities = [[i - 1 for i in nest] for nest in communities.nests]
    w = _validated_weights(weights)
    two_m = w.sum()
    if two_m == 0.0:
        return 0.0
    degrees = w.sum(axis=1)
    q = 0.0
    for members in communities:
        idx = np.asarray(members, dtype=np.int64)
        internal = w[np.ix_(idx, idx)].sum()
        q += internal / two_m - (degrees[idx].sum() / two_m) ** 2
    return float(q)


def community_detect(weights: np.ndarray, walk_length: int = WALK_LENGTH) -> NestPartition:
    """Partition items 1..n by agglomerative random-walk clustering.

    Vertices get a self-loop of weight 1 and transition matrix P = D^-1 A;
    a community's signature is the average of its members' rows of P**t.
    Only communities joined by positive off-diagonal weight may merge, the
    pair at minimum walk distance merges first, and distance ties go to the
    lexicographically lowest community index pair.  Every partition along
    the merge sequence is scored by modularity and the first strict maximum
    wins.  A graph with no edges keeps every item alone.
    """
    w = _validated_weights(weights)
    n = w.shape[0]
    if n == 0:
        raise ValueError("empty weight matrix")
    if w.sum() == 0.0:
        return singleton_partition(n)

    loops = w.copy()
    np.fill_diagonal(loops, 1.0)
    degrees = loops.sum(axis=1)
    transition = loops / degrees[:, None]
    walk = np.linalg.matrix_power(transition, walk_length)
    inv_degree = 1.0 / degrees

    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    vectors: dict[int, np.ndarray] = {i: walk[i].copy() for i in range(n)}
    neighbors: dict[int, set[int]] = {
        i: set(np.nonzero(w[i] > 0.0)[0].tolist()) for i in range(n)
    }
    snapshots = [[list(v) for v in members.values()]]
    next_id = n

    def walk_distance(a: int, b: int) -> float:
        diff = vectors[a] - vectors[b]
        size_a, size_b = len(members[a]), len(members[b])
        factor = size_a * size_b / (size_a + size_b)
        return factor * float(np.dot(diff * diff, inv_degree)) / n

    while len(members) > 1:
        best_pair = None
        best_dist = np.inf
        for a in sorted(members):
            for b in sorted(neighbors[a]):
                if b <= a:
                    continue
                dist = walk_distance(a, b)
                if dist < best_dist:
                    best_dist = dist
                    best_pair = (a, b)
        if best_pair is None:
            break  # only disconnected communities remain
        a, b = best_pair
        merged = next_id
        next_id += 1
        size_a, size_b = len(members[a]), len(members[b])
        vectors[merged] = (size_a * vectors[a] + size_b * vectors[b]) / (size_a + size_b)
        members[merged] = members.pop(a) + members.pop(b)
        joined = (neighbors.pop(a) | neighbors.pop(b)) - {a, b}
        neighbors[merged] = joined
        for c in joined:
            neighbors[c].discard(a)
            neighbors[c].discard(b)
            neighbors[c].add(merged)
        del vectors[a], vectors[b]
        snapshots.append([sorted(v) for v in members.values()])

    best_q = -np.inf
    best_groups = snapshots[0]
    for groups in snapshots:
        q = modularity(w, groups)
        if q > best_q:
            best_q = q
            best_groups = groups
    return NestPartition([[i + 1 for i in group] for group in best_groups])
