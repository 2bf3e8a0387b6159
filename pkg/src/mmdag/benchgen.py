"""Synthetic multi-task benchmark: closed random DAG, task subgraphs, samples.

A full DAG on P nodes is drawn from an Erdos-Renyi model under a random node
ranking and replaced by its transitive closure, so every task's subgraph
inherits mutually consistent causal relations.  The first floor(P/2) nodes are
scalars, the rest functional with a shared Fourier basis.  Coefficients put a
signed-uniform scalar times a rectangular identity on every inherited edge,
and samples follow the linear SEM with standard normal noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    BlockTransitionMatrix,
    NodeData,
    NodeSpec,
    TaskData,
    TaskSpec,
    WeightMatrix,
    block_weight_matrix,
)
from .causaldiff import (
    CycleError,
    DirectedGraph,
    causal_difference,
    find_cycle,
    transitive_closure,
)
from .funcdata import BasisSet, FunctionalSampleSet

__all__ = [
    "DEFAULT_GRID_POINTS",
    "GroundTruth",
    "TaskMetrics",
    "MetricsReport",
    "fourier_basis",
    "generate_full_dag",
    "sample_tasks",
    "benchmark_task_spec",
    "generate_coefficients",
    "generate_samples",
    "make_benchmark",
    "support_graph",
    "evaluate",
]

DEFAULT_GRID_POINTS = 101

# independent child-seed streams so task t's draw is stable under growing L/N
_STREAM_GRAPH = 0
_STREAM_TASKS = 1
_STREAM_COEFFICIENTS = 2
_STREAM_SAMPLES = 3


def fourier_basis(n_components: int, grid_points: int = DEFAULT_GRID_POINTS) -> BasisSet:
    """Alternating sqrt(2) sin/cos Fourier curves on a uniform grid over [0, 1]."""
    if n_components < 1:
        raise ValueError("n_components must be positive")
    grid = np.linspace(0.0, 1.0, grid_points)
    rows = []
    for k in range(1, n_components + 1):
        freq = 2.0 * math.pi * ((k + 1) // 2)
        rows.append(
            math.sqrt(2.0) * (np.sin(freq * grid) if k % 2 else np.cos(freq * grid))
        )
    return BasisSet(
        grid=grid,
        basis=np.vstack(rows),
        explained_variance=np.ones(n_components),
    )


def generate_full_dag(p: int, er_edge_prob: float = 0.3, seed: int = 0) -> DirectedGraph:
    """Transitive closure of an Erdos-Renyi DAG under a random node ranking."""
    if p < 2:
        raise ValueError("need at least two nodes")
    if not 0.0 < er_edge_prob < 1.0:
        raise ValueError("er_edge_prob must lie in (0, 1)")
    rng = np.random.default_rng([seed, _STREAM_GRAPH])
    rank = rng.permutation(p)
    edges = set()
    for i in range(p):
        for j in range(i + 1, p):
            if rng.random() < er_edge_prob:
                edges.add((int(rank[i]), int(rank[j])))
    raw = DirectedGraph(nodes=tuple(range(p)), edges=frozenset(edges))
    return transitive_closure(raw)


def sample_tasks(full_graph: DirectedGraph, n_tasks: int, seed: int = 0) -> list[tuple[int, ...]]:
    """Per-task node subsets with sizes uniform on [ceil(P/2), P]."""
    if n_tasks < 1:
        raise ValueError("need at least one task")
    nodes = np.asarray(full_graph.nodes)
    p = len(nodes)
    lo = (p + 1) // 2
    subsets = []
    for l in range(n_tasks):
        rng = np.random.default_rng([seed, _STREAM_TASKS, l])
        size = int(rng.integers(lo, p + 1))
        chosen = rng.choice(nodes, size=size, replace=False)
        subsets.append(tuple(int(v) for v in sorted(chosen)))
    return subsets


def _node_spec(global_id: int, p: int, n_components: int) -> NodeSpec:
    if global_id < p // 2:
        return NodeSpec(global_id=global_id, modality="scalar", raw_dim=1, embed_dim=1)
    return NodeSpec(
        global_id=global_id, modality="function", raw_dim=None, embed_dim=n_components
    )


def benchmark_task_spec(
    node_ids, p: int, n_components: int, n_samples: int, task_id: int
) -> TaskSpec:
    """TaskSpec for a benchmark task: low ids scalar, the rest functional."""
    nodes = tuple(_node_spec(g, p, n_components) for g in node_ids)
    return TaskSpec(task_id=task_id, nodes=nodes, sample_count=n_samples)


def generate_coefficients(
    spec: TaskSpec, full_graph: DirectedGraph, seed: int = 0
) -> BlockTransitionMatrix:
    """True transition matrix: c times a rectangular identity on inherited edges.

    The scalar c is drawn uniformly from (-2, -0.5) union (0.5, 2) per edge of
    the full graph between the task's global ids; all other blocks are zero.
    """
    rng = np.random.default_rng([seed, _STREAM_COEFFICIENTS, spec.task_id])
    m = spec.embed_dim
    values = np.zeros((m, m))
    ids = spec.global_ids
    for i in range(spec.num_nodes):
        for j in range(spec.num_nodes):
            if i == j or (ids[i], ids[j]) not in full_graph.edges:
                continue
            magnitude = rng.uniform(0.5, 2.0)
            sign = 1.0 if rng.random() < 0.5 else -1.0
            di = spec.nodes[i].embed_dim
            dj = spec.nodes[j].embed_dim
            values[spec.block_slice(i), spec.block_slice(j)] = (
                sign * magnitude * np.eye(di, dj)
            )
    return BlockTransitionMatrix(values=values, spec=spec)


def generate_samples(
    transitions: BlockTransitionMatrix,
    n_samples: int,
    basis: BasisSet,
    noise_std: float = 1.0,
    seed: int = 0,
) -> TaskData:
    """Draw SEM samples and render functional nodes as curves on the basis grid.

    Exogenous noise is standard normal; noise_std rescales it on nodes that
    have parents, while root nodes keep unit noise so the data stay
    non-degenerate in the noise-free limit.
    """
    spec = transitions.spec
    weights = block_weight_matrix(transitions)
    if find_cycle(weights.values > 0) is not None:
        cycle = find_cycle(weights.values > 0)
        raise CycleError([spec.global_ids[i] for i in cycle])
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")

    rng = np.random.default_rng([seed, _STREAM_SAMPLES, spec.task_id])
    m = spec.embed_dim
    noise = rng.standard_normal((n_samples, m))
    has_parent = weights.values.sum(axis=0) > 0
    for j in range(spec.num_nodes):
        if has_parent[j]:
            noise[:, spec.block_slice(j)] *= noise_std
    # a = C^T a + e per sample  <=>  rows of A solve (I - C)^T A^T = E^T
    eye = np.eye(m)
    embedded = np.linalg.solve((eye - transitions.values).T, noise.T).T

    nodes = []
    for j, node in enumerate(spec.nodes):
        block = embedded[:, spec.block_slice(j)]
        if node.modality == "scalar":
            nodes.append(NodeData.scalar(node.global_id, block))
        else:
            curves = block @ basis.basis
            nodes.append(
                NodeData.function(
                    FunctionalSampleSet(
                        grid=basis.grid, values=curves, node_id=node.global_id
                    )
                )
            )
    return TaskData(task_id=spec.task_id, nodes=tuple(nodes))


@dataclass(frozen=True)
class GroundTruth:
    """Everything the generator knows: graph, per-task truth, basis, seed."""

    graph: DirectedGraph
    task_specs: tuple[TaskSpec, ...]
    transitions: tuple[BlockTransitionMatrix, ...]
    weights: tuple[WeightMatrix, ...]
    basis: BasisSet
    seed: int
    params: dict

    @property
    def n_tasks(self) -> int:
        return len(self.task_specs)


def support_graph(weights: WeightMatrix) -> DirectedGraph:
    """Node-level graph whose edges are the nonzero weight entries."""
    ids = weights.global_ids
    edges = frozenset(
        (ids[i], ids[j]) for i, j in zip(*np.nonzero(weights.values > 0))
    )
    return DirectedGraph(nodes=ids, edges=edges)


def make_benchmark(
    p: int = 10,
    n_tasks: int = 10,
    n_samples: int = 20,
    n_components: int = 3,
    er_edge_prob: float = 0.3,
    noise_std: float = 1.0,
    seed: int = 0,
    grid_points: int = DEFAULT_GRID_POINTS,
) -> tuple[GroundTruth, list[TaskData]]:
    """Generate ground truth and raw datasets for every task."""
    full_graph = generate_full_dag(p, er_edge_prob, seed)
    subsets = sample_tasks(full_graph, n_tasks, seed)
    basis = fourier_basis(n_components, grid_points)
    specs = []
    transitions = []
    weights = []
    datasets = []
    for task_id, node_ids in enumerate(subsets):
        spec = benchmark_task_spec(node_ids, p, n_components, n_samples, task_id)
        true_c = generate_coefficients(spec, full_graph, seed)
        specs.append(spec)
        transitions.append(true_c)
        weights.append(block_weight_matrix(true_c))
        datasets.append(generate_samples(true_c, n_samples, basis, noise_std, seed))
    truth = GroundTruth(
        graph=full_graph,
        task_specs=tuple(specs),
        transitions=tuple(transitions),
        weights=tuple(weights),
        basis=basis,
        seed=seed,
        params={
            "P": p,
            "L": n_tasks,
            "N": n_samples,
            "K": n_components,
            "er_edge_prob": er_edge_prob,
            "noise_std": noise_std,
            "grid_points": grid_points,
        },
    )
    _check_cross_task_consistency(truth)
    return truth, datasets


def _check_cross_task_consistency(truth: GroundTruth):
    """True task graphs must agree on overlaps: pairwise causal difference 0."""
    graphs = [support_graph(w) for w in truth.weights]
    for a in range(len(graphs)):
        for b in range(a + 1, len(graphs)):
            cd = causal_difference(graphs[a], graphs[b])
            if cd != 0.0:
                raise ValueError(
                    f"inconsistent ground truth between tasks {a} and {b}: CD={cd}"
                )


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class TaskMetrics:
    task_id: int
    tp: int
    fp: int
    fn: int
    tn: int
    f1: float
    tpr: float
    fpr: float
    fdr: float


@dataclass(frozen=True)
class MetricsReport:
    per_task: tuple[TaskMetrics, ...]
    micro: TaskMetrics
    seed: int | None = None


def _metrics_from_counts(task_id, tp, fp, fn, tn) -> TaskMetrics:
    f1 = 2.0 * tp / (2.0 * tp + fp + fn) if (2 * tp + fp + fn) else 1.0
    tpr = tp / (tp + fn) if (tp + fn) else 1.0
    fpr = fp / (fp + tn) if (fp + tn) else 0.0
    fdr = fp / (tp + fp) if (tp + fp) else 0.0
    return TaskMetrics(
        task_id=task_id, tp=tp, fp=fp, fn=fn, tn=tn, f1=f1, tpr=tpr, fpr=fpr, fdr=fdr
    )


def evaluate(predicted, truth: GroundTruth, seed: int | None = None) -> MetricsReport:
    """Edge-recovery metrics per task plus the micro-average over pooled counts.

    Predictions are 0/1 adjacency matrices in each task's local node order;
    they are compared to the support of the true task weight matrix over all
    ordered off-diagonal node pairs.
    """
    if len(predicted) != truth.n_tasks:
        raise ValueError(
            f"expected {truth.n_tasks} adjacency matrices, got {len(predicted)}"
        )
    per_task = []
    pooled = np.zeros(4, dtype=int)
    for l, (adj, weights) in enumerate(zip(predicted, truth.weights)):
        adj = np.asarray(adj)
        p = weights.num_nodes
        if adj.shape != (p, p):
            raise ValueError(
                f"task {l}: adjacency must be {p} x {p}, got {adj.shape}"
            )
        pred = adj > 0
        true = weights.values > 0
        off = ~np.eye(p, dtype=bool)
        tp = int(np.sum(pred & true & off))
        fp = int(np.sum(pred & ~true & off))
        fn = int(np.sum(~pred & true & off))
        tn = int(np.sum(~pred & ~true & off))
        pooled += (tp, fp, fn, tn)
        per_task.append(_metrics_from_counts(l, tp, fp, fn, tn))
    micro = _metrics_from_counts(-1, *pooled)
    return MetricsReport(per_task=tuple(per_task), micro=micro, seed=seed)
