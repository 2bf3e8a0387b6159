"""Task descriptors and the embedded linear SEM over multi-modal nodes.

Every node contributes a block of columns to the per-task embedding matrix A:
scalar and vector nodes contribute their raw columns, functional nodes
contribute their FPCA scores.  The transition matrix C is blocked the same
way; its block Frobenius norms squared form the node-level weight matrix W.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .funcdata import (
    BasisSet,
    FpcaConfig,
    FunctionalSampleSet,
    ScoreMatrix,
    fpca_decompose,
)

__all__ = [
    "MODALITIES",
    "NodeSpec",
    "TaskSpec",
    "NodeData",
    "TaskData",
    "EmbeddingMatrix",
    "BlockTransitionMatrix",
    "WeightMatrix",
    "assemble_embedding",
    "block_weight_matrix",
    "residual_loss",
    "predict_node",
    "coefficient_function",
]

MODALITIES = ("scalar", "vector", "function")


@dataclass(frozen=True)
class NodeSpec:
    """One node's identity, modality and embedding width.

    raw_dim is the observed dimension: 1 for scalars, the vector length for
    vectors, and None for functional nodes (infinite-dimensional).  embed_dim
    is the node's column count in A: raw_dim for finite nodes unless PCA
    reduction was applied, the FPCA component count for functional nodes.
    """

    global_id: int
    modality: str
    raw_dim: int | None
    embed_dim: int
    pca_reduced: bool = False

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be at least 1")
        if self.modality == "function":
            if self.raw_dim is not None:
                raise ValueError("functional nodes have raw_dim=None")
        else:
            if self.raw_dim is None or self.raw_dim < 1:
                raise ValueError("finite nodes need a positive raw_dim")
            if self.modality == "scalar" and self.raw_dim != 1:
                raise ValueError("scalar nodes have raw_dim=1")
            if self.modality == "scalar" and self.embed_dim != 1 and not self.pca_reduced:
                raise ValueError("scalar nodes embed to one column")
            if not self.pca_reduced and self.embed_dim != self.raw_dim:
                raise ValueError("embed_dim must equal raw_dim unless pca_reduced")


@dataclass(frozen=True)
class TaskSpec:
    """Ordered node roster of one task plus the induced block layout of A/C."""

    task_id: int
    nodes: tuple[NodeSpec, ...]
    sample_count: int
    block_offsets: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if not self.nodes:
            raise ValueError("a task needs at least one node")
        if self.sample_count < 1:
            raise ValueError("sample_count must be positive")
        ids = [n.global_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate global ids in task {self.task_id}: {ids}")
        offsets = np.concatenate(([0], np.cumsum([n.embed_dim for n in self.nodes])))
        object.__setattr__(self, "block_offsets", tuple(int(o) for o in offsets))

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def embed_dim(self) -> int:
        return self.block_offsets[-1]

    @property
    def global_ids(self) -> tuple[int, ...]:
        return tuple(n.global_id for n in self.nodes)

    @property
    def node_dims(self) -> np.ndarray:
        return np.array([n.embed_dim for n in self.nodes], dtype=int)

    def block_slice(self, j: int) -> slice:
        return slice(self.block_offsets[j], self.block_offsets[j + 1])

    def node_index(self, global_id: int) -> int:
        for i, n in enumerate(self.nodes):
            if n.global_id == global_id:
                return i
        raise KeyError(f"global id {global_id} not in task {self.task_id}")


@dataclass(frozen=True)
class NodeData:
    """Raw observations for one node: columns for finite nodes, curves otherwise."""

    global_id: int
    modality: str
    values: np.ndarray | None = None  # N x raw_dim for scalar/vector nodes
    curves: FunctionalSampleSet | None = None
    pca_reduce: bool = False
    pca_components: int | None = None

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.modality == "function":
            if self.curves is None or self.values is not None:
                raise ValueError("functional nodes carry curves only")
        else:
            if self.values is None or self.curves is not None:
                raise ValueError("finite nodes carry a value matrix only")
            arr = np.asarray(self.values, dtype=float)
            if arr.ndim == 1:
                arr = arr[:, None]
            if arr.ndim != 2 or not np.all(np.isfinite(arr)):
                raise ValueError("values must be a finite N x T matrix")
            if self.modality == "scalar" and arr.shape[1] != 1:
                raise ValueError("scalar nodes have one column")
            arr.setflags(write=False)
            object.__setattr__(self, "values", arr)
        if self.pca_reduce and self.modality != "vector":
            raise ValueError("pca_reduce applies to vector nodes")
        if self.pca_reduce and self.pca_components is None:
            raise ValueError("pca_reduce needs pca_components")

    @classmethod
    def scalar(cls, global_id: int, column: np.ndarray) -> "NodeData":
        return cls(global_id=global_id, modality="scalar", values=column)

    @classmethod
    def vector(cls, global_id: int, matrix: np.ndarray, **kw) -> "NodeData":
        return cls(global_id=global_id, modality="vector", values=matrix, **kw)

    @classmethod
    def function(cls, samples: FunctionalSampleSet) -> "NodeData":
        return cls(global_id=samples.node_id, modality="function", curves=samples)

    @property
    def n_samples(self) -> int:
        if self.modality == "function":
            return self.curves.n_samples
        return self.values.shape[0]


@dataclass(frozen=True)
class TaskData:
    """All raw node observations for one task, nodes in local-index order."""

    task_id: int
    nodes: tuple[NodeData, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if not self.nodes:
            raise ValueError("a task needs at least one node")
        ids = [n.global_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate global ids in task {self.task_id}")
        counts = {n.n_samples for n in self.nodes}
        if len(counts) != 1:
            raise ValueError(
                f"inconsistent sample counts across nodes of task {self.task_id}: "
                f"{sorted(counts)}"
            )

    @property
    def sample_count(self) -> int:
        return self.nodes[0].n_samples


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Per-task embedded data A (N x M), columns laid out by the task's blocks."""

    values: np.ndarray
    spec: TaskSpec

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        if arr.shape != (self.spec.sample_count, self.spec.embed_dim):
            raise ValueError(
                f"A must be {self.spec.sample_count} x {self.spec.embed_dim}, "
                f"got {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding matrix must be finite")


@dataclass(frozen=True)
class BlockTransitionMatrix:
    """SEM coefficient matrix C (M x M) with zero diagonal blocks."""

    values: np.ndarray
    spec: TaskSpec

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        m = self.spec.embed_dim
        if arr.shape != (m, m):
            raise ValueError(f"C must be {m} x {m}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("transition matrix must be finite")
        for j in range(self.spec.num_nodes):
            s = self.spec.block_slice(j)
            if np.any(arr[s, s] != 0.0):
                raise ValueError(f"diagonal block {j} must be identically zero")

    def block(self, i: int, j: int) -> np.ndarray:
        return self.values[self.spec.block_slice(i), self.spec.block_slice(j)]


@dataclass(frozen=True)
class WeightMatrix:
    """Node-level edge weights: W_ij is the squared Frobenius norm of block C_ij."""

    values: np.ndarray
    global_ids: tuple[int, ...]

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "global_ids", tuple(self.global_ids))
        p = len(self.global_ids)
        if arr.shape != (p, p):
            raise ValueError(f"W must be {p} x {p}, got {arr.shape}")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError("weights must be finite and nonnegative")
        if np.any(np.diag(arr) != 0.0):
            raise ValueError("W must have a zero diagonal")

    @property
    def num_nodes(self) -> int:
        return len(self.global_ids)


def _pca_reduce(matrix: np.ndarray, k: int) -> np.ndarray:
    """Plain PCA scores of an N x T matrix onto its top-k right singular vectors."""
    if k > min(matrix.shape):
        raise ValueError(f"pca_components={k} exceeds min{matrix.shape}")
    _, _, vt = np.linalg.svd(matrix, full_matrices=False)
    comps = vt[:k]
    anchor = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), anchor])
    signs[signs == 0] = 1.0
    return matrix @ (comps * signs[:, None]).T


def assemble_embedding(
    data: TaskData, fpca: FpcaConfig | None = None
) -> tuple[EmbeddingMatrix, dict[int, BasisSet]]:
    """Embed one task's raw data into A, returning the per-node bases used.

    Scalar/vector nodes are copied verbatim (or PCA-reduced when the node data
    asks for it); each functional node is replaced by its FPCA scores.  The
    returned EmbeddingMatrix carries the TaskSpec with the block layout.
    """
    fpca = fpca or FpcaConfig()
    columns = []
    specs = []
    bases: dict[int, BasisSet] = {}
    for node in data.nodes:
        if node.modality == "function":
            basis, scores = fpca_decompose(
                node.curves,
                fpca.n_components,
                center=fpca.center,
                var_threshold=fpca.var_threshold,
            )
            bases[node.global_id] = basis
            columns.append(scores.scores)
            specs.append(
                NodeSpec(
                    global_id=node.global_id,
                    modality="function",
                    raw_dim=None,
                    embed_dim=basis.n_components,
                )
            )
        elif node.pca_reduce:
            reduced = _pca_reduce(node.values, node.pca_components)
            columns.append(reduced)
            specs.append(
                NodeSpec(
                    global_id=node.global_id,
                    modality=node.modality,
                    raw_dim=node.values.shape[1],
                    embed_dim=reduced.shape[1],
                    pca_reduced=True,
                )
            )
        else:
            columns.append(node.values)
            specs.append(
                NodeSpec(
                    global_id=node.global_id,
                    modality=node.modality,
                    raw_dim=node.values.shape[1],
                    embed_dim=node.values.shape[1],
                )
            )
    spec = TaskSpec(
        task_id=data.task_id, nodes=tuple(specs), sample_count=data.sample_count
    )
    return EmbeddingMatrix(values=np.hstack(columns), spec=spec), bases


def block_weight_matrix(
    transitions: BlockTransitionMatrix, spec: TaskSpec | None = None
) -> WeightMatrix:
    """Squared Frobenius norm of every block of C, diagonal forced to zero."""
    spec = spec or transitions.spec
    starts = np.asarray(spec.block_offsets[:-1])
    sq = transitions.values * transitions.values
    w = np.add.reduceat(np.add.reduceat(sq, starts, axis=0), starts, axis=1)
    np.fill_diagonal(w, 0.0)
    return WeightMatrix(values=w, global_ids=spec.global_ids)


def residual_loss(embedding: EmbeddingMatrix, transitions: BlockTransitionMatrix) -> float:
    """Half mean squared SEM residual: ||A - AC||_F^2 / (2N)."""
    a = embedding.values
    r = a - a @ transitions.values
    return float(np.sum(r * r)) / (2.0 * a.shape[0])


def predict_node(
    embedding: EmbeddingMatrix, transitions: BlockTransitionMatrix, j: int
) -> np.ndarray:
    """Noiseless SEM prediction of node j's embedded values from its parents."""
    spec = transitions.spec
    if not 0 <= j < spec.num_nodes:
        raise ValueError(f"node index {j} out of range")
    return embedding.values @ transitions.values[:, spec.block_slice(j)]


def coefficient_function(
    block: np.ndarray,
    source_basis: BasisSet | None = None,
    target_basis: BasisSet | None = None,
) -> np.ndarray:
    """Expand one C block into its interpretable coefficient curve or surface.

    With only a source basis (functional parent, finite child) each child
    component t gets a curve over s; with only a target basis (finite parent,
    functional child) each parent component s gets a curve over t; with both,
    the result is the full surface evaluated on the two grids (rows t,
    columns s).  Purely finite blocks have no coefficient function.
    """
    block = np.asarray(block, dtype=float)
    if block.ndim != 2:
        raise ValueError("block must be a matrix")
    if source_basis is None and target_basis is None:
        raise ValueError("finite-to-finite blocks are plain coefficients, no curve")
    if source_basis is not None and block.shape[0] != source_basis.n_components:
        raise ValueError("block rows must match the source basis size")
    if target_basis is not None and block.shape[1] != target_basis.n_components:
        raise ValueError("block columns must match the target basis size")
    if target_basis is None:
        return block.T @ source_basis.basis  # T_j x G_src, row t is gamma_t(s)
    if source_basis is None:
        return block @ target_basis.basis  # T_j' x G_dst, row s is gamma_s(t)
    return target_basis.basis.T @ block.T @ source_basis.basis  # G_dst x G_src
