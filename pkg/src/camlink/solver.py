"""Exact solver for the degree- and range-constrained spanning forest.

Given points in the unit square, a degree cap ``k`` and a range ``d``, find
an edge set using only pairs at distance ``<= d`` and no node of degree
``> k`` that minimises ``(components, edges)`` lexicographically.

Why forests suffice: if an optimal edge set contains a cycle, deleting any
cycle edge keeps every component connected (the endpoints stay joined by
the rest of the cycle), lowers no degree cap and removes one edge. So every
lexicographic optimum is a forest, and for a forest ``|E| = n - c``; the
objective collapses to minimising ``c`` over degree-capped forests.

With ``k = 2`` the question "is ``c = 1`` reachable" is Hamiltonian path on
the range graph, so the problem is NP-hard; exactness is only promised up
to ``MAX_EXACT_NODES`` nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError

MAX_EXACT_NODES = 24
MAX_ORACLE_EDGES = 20


@dataclass
class SolveResult:
    adjacency: np.ndarray
    components: int
    edge_count: int
    node_stats: np.ndarray = field(repr=False)

    @property
    def objective(self):
        return (self.components, self.edge_count)


class UnionFind:
    """Union by size with an undo log (no path compression, so undo is O(1))."""

    def __init__(self, n):
        self.parent = list(range(n))
        self.size = [1] * n
        self.count = n
        self._log = []

    def find(self, x):
        while self.parent[x] != x:
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            self._log.append(None)
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        self.count -= 1
        self._log.append((ra, rb))
        return True

    def undo(self):
        rec = self._log.pop()
        if rec is None:
            return
        ra, rb = rec
        self.parent[rb] = rb
        self.size[ra] -= self.size[rb]
        self.count += 1


def sample_coords(n: int, rng_seed) -> np.ndarray:
    """``n`` i.i.d. uniform points in the unit square."""
    if n < 1:
        raise ValueError(f"need at least one node, got n={n}")
    return np.random.default_rng(rng_seed).random((n, 2))


def pairwise_distances(coords) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff ** 2).sum(-1))


def feasibility_graph(coords, d: float):
    """All pairs ``(i, j, length)`` with ``i < j`` and ``length <= d``.

    Sorted by length, ties broken by ``(i, j)``.
    """
    if not d > 0:
        raise ValueError(f"range d must be positive, got {d}")
    dist = pairwise_distances(coords)
    n = len(dist)
    edges = [(i, j, float(dist[i, j])) for i in range(n) for j in range(i + 1, n) if dist[i, j] <= d]
    edges.sort(key=lambda e: (e[2], e[0], e[1]))
    return edges


def feasibility_adjacency(coords, d: float) -> np.ndarray:
    dist = pairwise_distances(coords)
    adj = (dist <= d).astype(np.int8)
    np.fill_diagonal(adj, 0)
    return adj


def connected_components(adjacency):
    """Component count and per-node labels (isolated nodes count)."""
    adj = np.asarray(adjacency)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError(f"adjacency must be square, got {adj.shape}")
    if not np.array_equal(adj, adj.T):
        raise ValueError("adjacency must be symmetric")
    n = len(adj)
    uf = UnionFind(n)
    for i, j in zip(*np.nonzero(np.triu(adj, 1))):
        uf.union(int(i), int(j))
    roots = [uf.find(i) for i in range(n)]
    relabel = {}
    labels = np.array([relabel.setdefault(r, len(relabel)) for r in roots], dtype=np.int64)
    return uf.count, labels


def _result(n, chosen, edges):
    adj = np.zeros((n, n), dtype=np.int8)
    for idx in chosen:
        i, j, _ = edges[idx]
        adj[i, j] = adj[j, i] = 1
    count, _ = connected_components(adj)
    return SolveResult(adj, count, len(chosen), adj.sum(1).astype(np.int64))


def solve_exact(coords, k: int, d: float) -> SolveResult:
    """Branch and bound over range-feasible edges (include branch first).

    State: union-find over chosen edges, degree counters. An edge may only
    be included if it joins two components and both endpoints are below
    the cap. Bound: the component count of chosen edges plus every
    undecided edge whose endpoints are both unsaturated, ignoring the caps
    otherwise; a subtree is cut when that bound cannot beat the incumbent.
    Returns the first optimum in include-first order over the sorted edge
    list (the greedy capped-Kruskal forest when that is optimal).
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = len(coords)
    if n > MAX_EXACT_NODES:
        raise CapacityError(f"exact solve supports n <= {MAX_EXACT_NODES}, got n={n}; lower n")
    if k < 1:
        raise ValueError(f"degree cap k must be >= 1, got {k}")
    edges = feasibility_graph(coords, d)
    m = len(edges)
    ends = [(i, j) for i, j, _ in edges]

    root_uf = UnionFind(n)
    for i, j in ends:
        root_uf.union(i, j)
    floor = root_uf.count

    uf = UnionFind(n)
    deg = [0] * n
    chosen = []
    best = {"c": n + 1, "edges": None}

    def lower_bound(pos):
        # components of chosen ∪ usable undecided edges; undone afterwards
        before = len(uf._log)
        for i, j in ends[pos:]:
            if deg[i] < k and deg[j] < k:
                uf.union(i, j)
        value = uf.count
        for _ in range(len(uf._log) - before):
            uf.undo()
        return value

    def dfs(pos):
        if best["c"] == floor:
            return
        if lower_bound(pos) >= best["c"]:
            return
        if pos == m:
            best["c"] = uf.count
            best["edges"] = list(chosen)
            return
        i, j = ends[pos]
        if deg[i] < k and deg[j] < k and uf.find(i) != uf.find(j):
            uf.union(i, j)
            deg[i] += 1
            deg[j] += 1
            chosen.append(pos)
            dfs(pos + 1)
            chosen.pop()
            deg[i] -= 1
            deg[j] -= 1
            uf.undo()
        dfs(pos + 1)

    dfs(0)
    return _result(n, best["edges"], edges)


def _components_batch(n, ends, masks):
    """Component counts for many edge subsets at once via label propagation."""
    labels = np.tile(np.arange(n, dtype=np.int16), (len(masks), 1))
    m = len(ends)
    bits = [((masks >> (m - 1 - e)) & 1).astype(bool) for e in range(m)]
    for _ in range(n):
        changed = False
        for e, (i, j) in enumerate(ends):
            sel = bits[e]
            li, lj = labels[sel, i], labels[sel, j]
            low = np.minimum(li, lj)
            if np.any(li != lj):
                changed = True
                labels[sel, i] = low
                labels[sel, j] = low
        if not changed:
            break
    # a node is a component root iff it keeps its own index as label
    return (labels == np.arange(n, dtype=np.int16)).sum(1)


def brute_force_oracle(coords, k: int, d: float) -> SolveResult:
    """Enumerate every subset of range-feasible edges.

    Subset masks put edge 0 in the most significant bit, so scanning masks
    from all-ones downwards visits subsets in the same include-first order
    as :func:`solve_exact`; among lexicographic ``(c, |E|)`` optima the
    largest mask is returned.
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = len(coords)
    edges = feasibility_graph(coords, d)
    m = len(edges)
    if m > MAX_ORACLE_EDGES:
        raise CapacityError(f"oracle enumerates <= {MAX_ORACLE_EDGES} feasible edges, got {m}")
    ends = [(i, j) for i, j, _ in edges]
    masks = np.arange(2 ** m, dtype=np.int64)
    deg = np.zeros((len(masks), n), dtype=np.int16)
    for e, (i, j) in enumerate(ends):
        bit = ((masks >> (m - 1 - e)) & 1).astype(np.int16)
        deg[:, i] += bit
        deg[:, j] += bit
    ok = (deg <= k).all(1)
    n_edges = deg.sum(1) // 2
    comps = _components_batch(n, ends, masks)
    key = np.where(ok, comps.astype(np.int64) * (m + 1) + n_edges, np.iinfo(np.int64).max)
    best = key.min()
    winner = int(masks[key == best].max())
    chosen = [e for e in range(m) if (winner >> (m - 1 - e)) & 1]
    return _result(n, chosen, edges)
