"""Communication graph and the linear algebra of the ensemble state expansion.

Nodes are 1-based in the public interface.  Every stacked quantity uses the
canonical ordering: owner node ascending, then neighbor ascending.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np
import scipy.linalg as la

COND_LIMIT = 1e12


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Topology:
    n: int
    edges: tuple[tuple[int, int], ...]

    def __init__(self, n: int, edges: Iterable[Iterable[int]]):
        if n < 1:
            raise TopologyError("graph needs at least one node")
        canon = set()
        for e in edges:
            i, j = (int(v) for v in e)
            if i == j:
                raise TopologyError(f"self-loop at node {i}")
            if not (1 <= i <= n and 1 <= j <= n):
                raise TopologyError(f"edge ({i}, {j}) references a node outside 1..{n}")
            key = (min(i, j), max(i, j))
            if key in canon:
                raise TopologyError(f"duplicate edge {key}")
            canon.add(key)
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "edges", tuple(sorted(canon)))

    def neighbors(self, i: int) -> list[int]:
        return self._adjacency[i - 1]

    @cached_property
    def _adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            adj[i - 1].append(j)
            adj[j - 1].append(i)
        return [sorted(a) for a in adj]

    @cached_property
    def directed_edges(self) -> list[tuple[int, int]]:
        """All sub-edges (i, j), j a neighbor of i, in canonical order."""
        return [(i, j) for i in range(1, self.n + 1) for j in self.neighbors(i)]

    def is_connected(self) -> bool:
        seen = {1}
        queue = deque([1])
        while queue:
            i = queue.popleft()
            for j in self.neighbors(i):
                if j not in seen:
                    seen.add(j)
                    queue.append(j)
        return len(seen) == self.n

    def require_connected(self) -> None:
        if not self.is_connected():
            raise TopologyError("communication graph is not connected")


def laplacian(t: Topology) -> np.ndarray:
    L = np.zeros((t.n, t.n))
    for i, j in t.edges:
        L[i - 1, j - 1] -= 1.0
        L[j - 1, i - 1] -= 1.0
        L[i - 1, i - 1] += 1.0
        L[j - 1, j - 1] += 1.0
    return L


def node_incidence(t: Topology, i: int) -> np.ndarray:
    """Rows ``e_j^T - e_i^T`` for each neighbor j of node i."""
    if not 1 <= i <= t.n:
        raise TopologyError(f"node {i} outside 1..{t.n}")
    nbrs = t.neighbors(i)
    if not nbrs:
        raise TopologyError(f"node {i} is isolated")
    V = np.zeros((len(nbrs), t.n))
    for r, j in enumerate(nbrs):
        V[r, j - 1] = 1.0
        V[r, i - 1] = -1.0
    return V


def stacked_incidence(t: Topology) -> np.ndarray:
    return np.vstack([node_incidence(t, i) for i in range(1, t.n + 1)])


def degree_selector(t: Topology) -> np.ndarray:
    """``S = diag(1^T_{J_i})``; sums each node's own sub-edge rows."""
    S = np.zeros((t.n, len(t.directed_edges)))
    for r, (i, _) in enumerate(t.directed_edges):
        S[i - 1, r] = 1.0
    return S


@dataclass(frozen=True)
class WeightingVector:
    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.ndim != 1 or not np.all(np.isfinite(q)):
            raise ValueError("weighting vector must be a finite 1-d array")
        if abs(q.sum() - 1.0) > 1e-14 * max(1, q.size):
            raise ValueError(f"weights must sum to one, got {q.sum()!r}")
        object.__setattr__(self, "q", q)

    def __len__(self):
        return self.q.size


def weighting_from_D(d_diag) -> WeightingVector:
    d = np.asarray(d_diag, dtype=float)
    if np.any(d <= 0):
        raise ValueError("D must have strictly positive diagonal")
    inv = 1.0 / d
    return WeightingVector(inv / inv.sum())


def projection(q: WeightingVector | np.ndarray) -> np.ndarray:
    """Skew projection ``I - 1 q^T`` onto ker q^T along span(1)."""
    qv = q.q if isinstance(q, WeightingVector) else np.asarray(q, dtype=float)
    n = qv.size
    return np.eye(n) - np.outer(np.ones(n), qv)


@dataclass(frozen=True)
class SpanningTree:
    root: int
    directed_edges: tuple[tuple[int, int], ...]
    non_tree_edges: tuple[tuple[int, int], ...]
    v_beta: np.ndarray
    v_barbeta: np.ndarray
    t_barbeta: np.ndarray


def spanning_tree(t: Topology, root: int = 1) -> SpanningTree:
    """BFS tree from ``root`` with edges directed parent -> child.

    Non-tree edges (i, j) keep i < j; their edge state x_j - x_i is written as
    the difference of the tree paths from the root to j and to i.
    """
    if not 1 <= root <= t.n:
        raise TopologyError(f"root {root} outside 1..{t.n}")
    t.require_connected()
    parent = {root: None}
    order = []
    queue = deque([root])
    while queue:
        i = queue.popleft()
        for j in t.neighbors(i):
            if j not in parent:
                parent[j] = i
                order.append((i, j))
                queue.append(j)
    tree = tuple(order)
    index = {e: k for k, e in enumerate(tree)}
    n_tree = t.n - 1

    # path[v]: signed combination of tree edge states giving x_v - x_root
    path = {root: np.zeros(n_tree)}
    for i, j in tree:
        p = path[i].copy()
        p[index[(i, j)]] += 1.0
        path[j] = p

    tree_set = {(min(e), max(e)) for e in tree}
    others = tuple(e for e in t.edges if e not in tree_set)
    T = np.zeros((len(others), n_tree))
    Vbar = np.zeros((len(others), t.n))
    for r, (i, j) in enumerate(others):
        T[r] = path[j] - path[i]
        Vbar[r, j - 1] = 1.0
        Vbar[r, i - 1] = -1.0

    V = np.zeros((n_tree, t.n))
    for r, (i, j) in enumerate(tree):
        V[r, j - 1] = 1.0
        V[r, i - 1] = -1.0
    return SpanningTree(
        root=root, directed_edges=tree, non_tree_edges=others, v_beta=V, v_barbeta=Vbar, t_barbeta=T
    )


def generalized_inverse(st: SpanningTree | np.ndarray, q: WeightingVector | np.ndarray) -> np.ndarray:
    """Right inverse ``W (V W)^{-1}`` of the tree incidence with range ker q^T."""
    V = st.v_beta if isinstance(st, SpanningTree) else np.asarray(st, dtype=float)
    qv = q.q if isinstance(q, WeightingVector) else np.asarray(q, dtype=float)
    n = qv.size
    W = projection(qv)[:, : n - 1]
    VW = V @ W
    if np.linalg.cond(VW) > COND_LIMIT:
        W = la.null_space(qv[None, :])
        VW = V @ W
        if np.linalg.cond(VW) > COND_LIMIT:
            raise np.linalg.LinAlgError("V_beta W is singular for every admissible basis")
    return np.linalg.solve(VW.T, W.T).T
