"""Graph-difference machinery: causal-order matrices and their smooth surrogate.

The exact side works on DAGs: the transitive causal matrix encodes, for each
node pair, whether one precedes the other in every consistent causal order
(1), in none (0), or only in some (0.5).  The differentiable side replaces it
with an elementwise sigmoid of the antisymmetrized reachability polynomial of
a nonnegative weight matrix, which converges to the exact matrix as the
sharpness constant grows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import WeightMatrix

__all__ = [
    "CycleError",
    "DirectedGraph",
    "TransitiveCausalMatrix",
    "OverlapMap",
    "find_cycle",
    "topological_order",
    "transitive_closure",
    "transitive_causal_matrix",
    "project_graph",
    "causal_difference",
    "edge_difference",
    "weight_power_stack",
    "reachability_polynomial",
    "differentiable_transitive_matrix",
    "dcd",
    "dcd_gradient",
    "POWER_CLAMP",
]

POWER_CLAMP = 1e12  # cap on entries of intermediate weight-matrix powers


class CycleError(ValueError):
    """Raised when an operation requiring acyclicity meets a cycle."""

    def __init__(self, cycle):
        self.cycle = tuple(cycle)
        path = " -> ".join(str(v) for v in (*self.cycle, self.cycle[0]))
        super().__init__(f"graph contains a cycle: {path}")


@dataclass(frozen=True)
class DirectedGraph:
    """Directed graph over global node ids; edges are ordered id pairs."""

    nodes: tuple[int, ...]
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        nodes = tuple(int(v) for v in self.nodes)
        edges = frozenset((int(u), int(v)) for u, v in self.edges)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        if len(set(nodes)) != len(nodes):
            raise ValueError("duplicate node ids")
        known = set(nodes)
        for u, v in edges:
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            if u not in known or v not in known:
                raise ValueError(f"edge ({u}, {v}) uses an unknown node id")

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def index(self, node_id: int) -> int:
        return self.nodes.index(node_id)

    def adjacency(self) -> np.ndarray:
        pos = {v: i for i, v in enumerate(self.nodes)}
        adj = np.zeros((self.num_nodes, self.num_nodes))
        for u, v in self.edges:
            adj[pos[u], pos[v]] = 1.0
        return adj


@dataclass(frozen=True)
class TransitiveCausalMatrix:
    """{0, 0.5, 1}-valued causal-order relation matrix of a DAG."""

    values: np.ndarray
    node_ids: tuple[int, ...]

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "node_ids", tuple(self.node_ids))
        p = len(self.node_ids)
        if arr.shape != (p, p):
            raise ValueError("matrix shape must match the node id list")


@dataclass(frozen=True)
class OverlapMap:
    """Index pairs (local in u, local in v) of nodes shared by two graphs."""

    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        pairs = tuple((int(a), int(b)) for a, b in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        if len({a for a, _ in pairs}) != len(pairs) or len(
            {b for _, b in pairs}
        ) != len(pairs):
            raise ValueError("overlap map must be injective on both sides")

    @classmethod
    def from_global_ids(cls, ids_u, ids_v) -> "OverlapMap":
        pos_v = {v: i for i, v in enumerate(ids_v)}
        pairs = [
            (i, pos_v[g]) for i, g in enumerate(ids_u) if g in pos_v
        ]
        return cls(pairs=tuple(pairs))

    def swapped(self) -> "OverlapMap":
        return OverlapMap(pairs=tuple((b, a) for a, b in self.pairs))

    @property
    def left(self) -> np.ndarray:
        return np.array([a for a, _ in self.pairs], dtype=int)

    @property
    def right(self) -> np.ndarray:
        return np.array([b for _, b in self.pairs], dtype=int)

    def __len__(self) -> int:
        return len(self.pairs)


def find_cycle(adjacency: np.ndarray) -> list[int] | None:
    """One directed cycle of a boolean adjacency matrix, or None if acyclic."""
    n = adjacency.shape[0]
    succ = [np.flatnonzero(adjacency[i]).tolist() for i in range(n)]
    color = [0] * n  # 0 unseen, 1 on stack, 2 done
    parent = [-1] * n
    for root in range(n):
        if color[root]:
            continue
        stack = [(root, iter(succ[root]))]
        color[root] = 1
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color[nxt] == 0:
                    color[nxt] = 1
                    parent[nxt] = node
                    stack.append((nxt, iter(succ[nxt])))
                    advanced = True
                    break
                if color[nxt] == 1:  # back edge closes a cycle
                    cycle = [node]
                    cur = node
                    while cur != nxt:
                        cur = parent[cur]
                        cycle.append(cur)
                    cycle.reverse()
                    return cycle
            if not advanced:
                color[node] = 2
                stack.pop()
    return None


def topological_order(graph: DirectedGraph) -> list[int]:
    """Node ids in one topological order; raises CycleError naming a cycle."""
    adj = graph.adjacency() > 0
    cycle = find_cycle(adj)
    if cycle is not None:
        raise CycleError([graph.nodes[i] for i in cycle])
    n = graph.num_nodes
    indeg = adj.sum(axis=0).astype(int)
    ready = [i for i in range(n) if indeg[i] == 0]
    order = []
    while ready:
        i = ready.pop()
        order.append(graph.nodes[i])
        for j in np.flatnonzero(adj[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(int(j))
    return order


def _reachability(graph: DirectedGraph) -> np.ndarray:
    """Boolean matrix: entry (i, j) true iff j is reachable from i (i != j)."""
    adj = graph.adjacency() > 0
    cycle = find_cycle(adj)
    if cycle is not None:
        raise CycleError([graph.nodes[i] for i in cycle])
    reach = adj.copy()
    for k in range(graph.num_nodes):  # Floyd-Warshall closure
        reach |= reach[:, k : k + 1] & reach[k : k + 1, :]
    return reach


def transitive_closure(graph: DirectedGraph) -> DirectedGraph:
    """DAG whose edges are all reachability pairs of the input DAG."""
    reach = _reachability(graph)
    edges = frozenset(
        (graph.nodes[i], graph.nodes[j]) for i, j in zip(*np.nonzero(reach))
    )
    return DirectedGraph(nodes=graph.nodes, edges=edges)


def transitive_causal_matrix(graph: DirectedGraph) -> TransitiveCausalMatrix:
    """Causal-order relation matrix of a DAG, computed via reachability.

    For DAGs, i precedes j in every consistent order exactly when j is
    reachable from i, so the closure realizes the order-quantified definition.
    """
    reach = _reachability(graph)
    values = np.full((graph.num_nodes, graph.num_nodes), 0.5)
    values[reach] = 1.0
    values[reach.T] = 0.0
    return TransitiveCausalMatrix(values=values, node_ids=graph.nodes)


def project_graph(graph: DirectedGraph, keep) -> DirectedGraph:
    """Induced subgraph on `keep`: exactly the edges with both endpoints kept."""
    keep = [int(v) for v in keep]
    unknown = set(keep) - set(graph.nodes)
    if unknown:
        raise ValueError(f"unknown node ids in projection: {sorted(unknown)}")
    keep_set = set(keep)
    edges = frozenset(
        (u, v) for u, v in graph.edges if u in keep_set and v in keep_set
    )
    return DirectedGraph(nodes=tuple(keep), edges=edges)


def causal_difference(g_u: DirectedGraph, g_v: DirectedGraph) -> float:
    """Squared difference of the two causal-order matrices over shared nodes."""
    t_u = transitive_causal_matrix(g_u)
    t_v = transitive_causal_matrix(g_v)
    overlap = OverlapMap.from_global_ids(g_u.nodes, g_v.nodes)
    if not len(overlap):
        return 0.0
    iu, iv = overlap.left, overlap.right
    diff = t_u.values[np.ix_(iu, iu)] - t_v.values[np.ix_(iv, iv)]
    return float(np.sum(diff * diff))


def edge_difference(g_u: DirectedGraph, g_v: DirectedGraph) -> int:
    """Count of node pairs (over shared nodes) whose edge is in exactly one graph."""
    shared = set(g_u.nodes) & set(g_v.nodes)
    count = 0
    for i in shared:
        for j in shared:
            if ((i, j) in g_u.edges) != ((i, j) in g_v.edges):
                count += 1
    return count


def _as_weight_array(w) -> np.ndarray:
    arr = w.values if isinstance(w, WeightMatrix) else np.asarray(w, dtype=float)
    arr = np.array(arr, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError("weight matrix must be square")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError("weights must be finite and nonnegative")
    if np.any(np.diag(arr) != 0.0):
        raise ValueError("weight matrix must have a zero diagonal")
    return arr


def weight_power_stack(w: np.ndarray, clamp: float = POWER_CLAMP):
    """Powers W^0..W^P with entries capped at `clamp`.

    Returns (stack with shape (P+1, P, P), number of clamped entries).  The
    cap keeps high powers finite during optimization while preserving the
    sign/support structure the sigmoid step cares about.
    """
    p = w.shape[0]
    pows = np.empty((p + 1, p, p))
    pows[0] = np.eye(p)
    clamped = 0
    for k in range(1, p + 1):
        nxt = pows[k - 1] @ w
        over = nxt > clamp
        if over.any():
            clamped += int(over.sum())
            nxt = np.minimum(nxt, clamp)
        pows[k] = nxt
    return pows, clamped


def reachability_polynomial(w) -> np.ndarray:
    """I + W + W^2 + ... + W^P; entry (i, j) > 0 iff j is reachable from i."""
    arr = _as_weight_array(w)
    pows, _ = weight_power_stack(arr)
    return pows.sum(axis=0)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # clipping keeps exp() finite; sigmoid saturates well inside +-500 anyway
    z = np.exp(-np.clip(x, -500.0, 500.0))
    return 1.0 / (1.0 + z)


def _sigmoid_prime(x: np.ndarray) -> np.ndarray:
    s = _sigmoid(x)
    return s * (1.0 - s)


def _transitive_parts(w: np.ndarray, c: float):
    """Shared forward pass: (power stack, l(W), antisym argument D, T, clamps)."""
    pows, clamped = weight_power_stack(w)
    lmat = pows.sum(axis=0)
    d = lmat - lmat.T
    t = _sigmoid(c * d)
    # exact antisymmetry: the lower triangle mirrors the upper one
    upper = np.triu_indices(w.shape[0], 1)
    t[(upper[1], upper[0])] = 1.0 - t[upper]
    np.fill_diagonal(t, 0.5)
    return pows, lmat, d, t, clamped


def differentiable_transitive_matrix(w, c: float) -> np.ndarray:
    """Sigmoid of the antisymmetrized reachability polynomial, sharpness c."""
    arr = _as_weight_array(w)
    if c <= 0:
        raise ValueError("sharpness c must be positive")
    _, _, _, t, _ = _transitive_parts(arr, c)
    return t


def _default_overlap(w_u, w_v, overlap):
    if overlap is not None:
        return overlap
    if isinstance(w_u, WeightMatrix) and isinstance(w_v, WeightMatrix):
        return OverlapMap.from_global_ids(w_u.global_ids, w_v.global_ids)
    raise ValueError("an OverlapMap is required for plain weight arrays")


def dcd(w_u, w_v, overlap: OverlapMap | None = None, c: float = 10.0) -> float:
    """Differentiable causal difference between two weight matrices."""
    overlap = _default_overlap(w_u, w_v, overlap)
    if not len(overlap):
        return 0.0
    t_u = differentiable_transitive_matrix(w_u, c)
    t_v = differentiable_transitive_matrix(w_v, c)
    iu, iv = overlap.left, overlap.right
    diff = t_u[np.ix_(iu, iu)] - t_v[np.ix_(iv, iv)]
    return float(np.sum(diff * diff))


def _pair_gmat(t_u, t_v, overlap: OverlapMap, c: float) -> np.ndarray:
    """d DCD / d l(W_u).

    Equals 2 Q(x, y) with x, y the scaled antisymmetrized reachability entries
    of the two tasks; evaluated through stable sigmoids as
    4 c sigmoid'(x) (T_u - T_v), which is algebraically the same expression
    (sigmoid'(x) = T_u (1 - T_u) at the same entries).
    """
    p = t_u.shape[0]
    g = np.zeros((p, p))
    iu, iv = overlap.left, overlap.right
    grid_u = np.ix_(iu, iu)
    tu_sub = t_u[grid_u]
    diff = tu_sub - t_v[np.ix_(iv, iv)]
    g[grid_u] = 4.0 * c * tu_sub * (1.0 - tu_sub) * diff
    return g


def _chain_prep(pows: np.ndarray):
    """Transposed power stack and its reversed prefix sums, shared per task."""
    p = pows.shape[1]
    tp = np.ascontiguousarray(pows[:p].transpose(0, 2, 1))
    cum_rev = np.ascontiguousarray(np.cumsum(tp, axis=0)[::-1])
    return tp, cum_rev


def _chain_apply(gmat: np.ndarray, tp: np.ndarray, cum_rev: np.ndarray) -> np.ndarray:
    left = tp @ gmat
    return np.einsum("rij,rjk->ik", left, cum_rev)


def _chain_through_powers(gmat: np.ndarray, pows: np.ndarray) -> np.ndarray:
    """Contract d(loss)/d(l) with d(l)/d(W) = sum_p sum_{r<p} W^r J W^{p-1-r}.

    The double sum collapses to sum over r+s <= P-1 of (W^r)^T G (W^s)^T,
    computed with prefix sums of the transposed power stack.
    """
    return _chain_apply(gmat, *_chain_prep(pows))


def dcd_gradient(
    w_u, w_v, overlap: OverlapMap | None = None, c: float = 10.0
) -> np.ndarray:
    """Gradient of dcd(w_u, w_v) with respect to the entries of w_u."""
    overlap = _default_overlap(w_u, w_v, overlap)
    arr_u = _as_weight_array(w_u)
    arr_v = _as_weight_array(w_v)
    if not len(overlap):
        return np.zeros_like(arr_u)
    pows_u, _, _, t_u, _ = _transitive_parts(arr_u, c)
    _, _, _, t_v, _ = _transitive_parts(arr_v, c)
    gmat = _pair_gmat(t_u, t_v, overlap, c)
    return _chain_through_powers(gmat, pows_u)
