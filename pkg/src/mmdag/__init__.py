"""Multi-task structure learning for DAGs over multi-modal node variables."""

from .funcdata import (
    BasisSet,
    FpcaConfig,
    FunctionalSampleSet,
    ScoreMatrix,
    fpca_decompose,
    fpca_project,
    fpca_reconstruct,
    interval_average,
    quadrature_inner_product,
)
from .core import (
    BlockTransitionMatrix,
    EmbeddingMatrix,
    NodeData,
    NodeSpec,
    TaskData,
    TaskSpec,
    WeightMatrix,
    assemble_embedding,
    block_weight_matrix,
    coefficient_function,
    predict_node,
    residual_loss,
)
from .causaldiff import (
    CycleError,
    DirectedGraph,
    OverlapMap,
    TransitiveCausalMatrix,
    causal_difference,
    dcd,
    dcd_gradient,
    differentiable_transitive_matrix,
    edge_difference,
    project_graph,
    reachability_polynomial,
    transitive_causal_matrix,
    transitive_closure,
)
from .learner import (
    DivergenceError,
    FitResult,
    HyperParams,
    SimilarityMatrix,
    acyclicity,
    acyclicity_gradient,
    augmented_objective,
    fit,
    full_gradient,
    matrix_diff_penalty,
    objective,
    threshold_edges,
)
from .benchgen import (
    GroundTruth,
    MetricsReport,
    evaluate,
    generate_full_dag,
    make_benchmark,
    sample_tasks,
)

__version__ = "0.1.0"
