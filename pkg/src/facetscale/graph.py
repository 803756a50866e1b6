"""Bipartite linkage graphs: components, diameter and mean distance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

EXACT_NODE_LIMIT = 20_000
SAMPLED_SOURCES = 500


def bipartite_adjacency(left: np.ndarray, right: np.ndarray, n_left: int, n_right: int):
    """Undirected adjacency over ``n_left + n_right`` nodes, one edge per pair."""
    left = np.asarray(left, dtype=np.int64)
    right = np.asarray(right, dtype=np.int64) + n_left
    n = n_left + n_right
    data = np.ones(left.size, dtype=np.int8)
    adj = sparse.coo_matrix((data, (left, right)), shape=(n, n)).tocsr()
    adj.data[:] = 1
    return (adj + adj.T).tocsr()


def bipartite_components(left, right, n_left, n_right):
    """Number of connected components and a label per node."""
    adj = bipartite_adjacency(left, right, n_left, n_right)
    return csgraph.connected_components(adj, directed=False)


@dataclass
class DistanceSummary:
    nodes: int
    edges: int
    connected_components: int
    component_sizes: list = field(default_factory=list)
    diameter: float = 0.0
    average_distance: float = 0.0
    exact: bool = True


def _bfs_rows(adj, sources):
    d = csgraph.shortest_path(adj, directed=False, unweighted=True, indices=sources)
    return np.atleast_2d(d)


def distance_summary(adj, seed=0, exact_limit=EXACT_NODE_LIMIT, chunk=256) -> DistanceSummary:
    """Diameter and mean pairwise distance over reachable, distinct pairs.

    Exact all-source BFS up to ``exact_limit`` nodes; beyond that the diameter
    is a double-sweep lower bound and the mean distance is estimated from
    :data:`SAMPLED_SOURCES` seeded random sources.
    """
    n = adj.shape[0]
    n_comp, labels = csgraph.connected_components(adj, directed=False)
    sizes = sorted(np.bincount(labels).tolist(), reverse=True)
    out = DistanceSummary(nodes=n, edges=int(adj.nnz // 2), connected_components=int(n_comp),
                          component_sizes=sizes)
    if n < 2:
        return out
    if n <= exact_limit:
        total, pairs, diam = 0.0, 0, 0.0
        for start in range(0, n, chunk):
            d = _bfs_rows(adj, np.arange(start, min(start + chunk, n)))
            finite = np.isfinite(d) & (d > 0)
            if finite.any():
                total += d[finite].sum()
                pairs += int(finite.sum())
                diam = max(diam, float(d[finite].max()))
        out.diameter = diam
        out.average_distance = total / pairs if pairs else 0.0
        return out
    rng = np.random.default_rng(seed)
    out.exact = False
    # double sweep from a random node of the largest component
    big = np.flatnonzero(labels == np.argmax(np.bincount(labels)))
    start = int(rng.choice(big))
    d0 = _bfs_rows(adj, [start])[0]
    far = int(np.argmax(np.where(np.isfinite(d0), d0, -1)))
    d1 = _bfs_rows(adj, [far])[0]
    out.diameter = float(np.max(d1[np.isfinite(d1)]))
    sources = rng.choice(n, size=min(SAMPLED_SOURCES, n), replace=False)
    d = _bfs_rows(adj, sources)
    finite = np.isfinite(d) & (d > 0)
    out.average_distance = float(d[finite].mean()) if finite.any() else 0.0
    out.diameter = max(out.diameter, float(d[finite].max()) if finite.any() else 0.0)
    return out
