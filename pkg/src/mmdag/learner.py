"""Joint structure learning across tasks under smooth acyclicity constraints.

The multi-task score is the sum of per-task SEM residuals, an L1 penalty on
the transition matrices, and a pairwise coupling penalty (differentiable
causal difference, plain matrix difference, or none) over shared nodes.  Each
task's acyclicity constraint tr(e^W) - P = 0 enters through a Lagrangian with
a quadratic penalty whose dual variable and coefficient are updated in an
outer loop around an inner Adam minimization.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import BlockTransitionMatrix, EmbeddingMatrix, WeightMatrix
from .causaldiff import (
    OverlapMap,
    _as_weight_array,
    _chain_apply,
    _chain_prep,
    _pair_gmat,
    _transitive_parts,
    find_cycle,
)

__all__ = [
    "DivergenceError",
    "HyperParams",
    "SimilarityMatrix",
    "FitResult",
    "acyclicity",
    "acyclicity_gradient",
    "matrix_diff_penalty",
    "matrix_diff_gradient",
    "objective",
    "augmented_objective",
    "full_gradient",
    "threshold_edges",
    "fit",
]

COUPLINGS = ("dcd", "matrix_diff", "none")


class DivergenceError(RuntimeError):
    """Optimization produced a non-finite loss; carries the trace so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


@dataclass
class HyperParams:
    """Optimizer configuration.

    lambda_ and rho weight the L1 and coupling penalties; c is the sigmoid
    sharpness used during optimization and eval_c the sharper evaluation-mode
    value.  alpha0/rate_r/h_min drive the outer quadratic-penalty loop
    (alpha0=1, dual start 0, alpha multiplied by rate_r each round until the
    summed constraint drops below h_min); alpha_max caps the growth.  omega is
    the edge threshold applied to the learned weights.  per_task_dual switches
    the single shared dual variable to one per task.  inner_tol/inner_window
    stop the inner Adam loop once the objective improvement over the window
    falls below tol (relative).
    """

    lambda_: float = 0.01
    rho: float = 0.1
    c: float = 10.0
    eval_c: float = 50.0
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    alpha0: float = 1.0
    rate_r: float = 10.0
    alpha_max: float = 1e12
    h_min: float = 1e-8
    max_outer: int = 20
    max_inner: int = 1000
    inner_tol: float = 1e-4
    inner_window: int = 50
    omega: float = 0.3
    coupling: str = "dcd"
    per_task_dual: bool = False
    standardize: bool = False
    deterministic: bool = True
    seed: int = 0

    def validate(self):
        nonneg = {
            "lambda_": self.lambda_,
            "rho": self.rho,
            "omega": self.omega,
            "adam_eps": self.adam_eps,
        }
        bad = [k for k, v in nonneg.items() if v < 0]
        positive = {
            "c": self.c,
            "eval_c": self.eval_c,
            "learning_rate": self.learning_rate,
            "h_min": self.h_min,
            "max_outer": self.max_outer,
            "max_inner": self.max_inner,
            "alpha_max": self.alpha_max,
        }
        bad += [k for k, v in positive.items() if v <= 0]
        if not 0 <= self.adam_beta1 < 1 or not 0 <= self.adam_beta2 < 1:
            bad += ["adam_beta1/adam_beta2"]
        if self.rate_r <= 1:
            bad += ["rate_r"]
        if self.coupling not in COUPLINGS:
            bad += ["coupling"]
        if bad:
            raise ValueError(f"invalid hyperparameters: {sorted(set(bad))}")
        return self


@dataclass(frozen=True)
class SimilarityMatrix:
    """Symmetric nonnegative task-pair weights; the diagonal is ignored."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError("similarity matrix must be square")
        if not np.allclose(arr, arr.T):
            raise ValueError("similarity matrix must be symmetric")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError("similarities must be finite and nonnegative")
        np.fill_diagonal(arr, 0.0)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def uniform(cls, n_tasks: int, value: float = 1.0) -> "SimilarityMatrix":
        return cls(values=np.full((n_tasks, n_tasks), float(value)))


@dataclass
class FitResult:
    """Learned per-task graphs plus optimization diagnostics."""

    transitions: list[BlockTransitionMatrix]
    weights: list[WeightMatrix]
    adjacencies: list[np.ndarray]
    objective_trace: list[tuple]  # (outer, inner_steps, objective, sum_h, beta, alpha)
    h_trace: list[list[float]]  # per outer iteration, per task
    outer_iterations: int
    beta: float | np.ndarray
    converged: bool
    diagnostics: dict


# ---------------------------------------------------------------------------
# acyclicity


def _expm(a: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling-and-squaring with a truncated Taylor series.

    Exact to machine precision for the modest norms arising here (the series
    is driven below 1e-22 before squaring).
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    norm = float(np.linalg.norm(a, 1))
    if not np.isfinite(norm):
        return np.full_like(a, np.inf)
    s = 0 if norm <= 0.5 else int(np.ceil(np.log2(norm / 0.5)))
    x = a / (2.0**s)
    result = np.eye(n) + x
    term = x.copy()
    for k in range(2, 19):
        term = term @ x / k
        result += term
    for _ in range(s):
        result = result @ result
    return result


def acyclicity(w) -> float:
    """tr(e^W) - P; zero exactly when the nonnegative weights form a DAG."""
    arr = _as_weight_array(w)
    return float(np.trace(_expm(arr))) - arr.shape[0]


def acyclicity_gradient(w) -> np.ndarray:
    """Gradient of acyclicity w.r.t. the weight entries: transpose of e^W."""
    arr = _as_weight_array(w)
    return _expm(arr).T


# ---------------------------------------------------------------------------
# coupling penalties on weight matrices


def matrix_diff_penalty(w_u, w_v, overlap: OverlapMap | None = None) -> float:
    """Squared difference of edge weights over the shared node pairs."""
    if overlap is None:
        overlap = OverlapMap.from_global_ids(w_u.global_ids, w_v.global_ids)
    if not len(overlap):
        return 0.0
    arr_u = _as_weight_array(w_u)
    arr_v = _as_weight_array(w_v)
    iu, iv = overlap.left, overlap.right
    diff = arr_u[np.ix_(iu, iu)] - arr_v[np.ix_(iv, iv)]
    return float(np.sum(diff * diff))


def matrix_diff_gradient(
    w_u, w_v, overlap: OverlapMap | None = None
) -> np.ndarray:
    """Gradient of matrix_diff_penalty w.r.t. the entries of w_u."""
    if overlap is None:
        overlap = OverlapMap.from_global_ids(w_u.global_ids, w_v.global_ids)
    arr_u = _as_weight_array(w_u)
    arr_v = _as_weight_array(w_v)
    grad = np.zeros_like(arr_u)
    if not len(overlap):
        return grad
    iu, iv = overlap.left, overlap.right
    grad[np.ix_(iu, iu)] = 2.0 * (
        arr_u[np.ix_(iu, iu)] - arr_v[np.ix_(iv, iv)]
    )
    return grad


# ---------------------------------------------------------------------------
# multi-task objective machinery


class _TaskWork:
    """Cached per-task quantities that stay fixed during optimization."""

    def __init__(self, embedding: EmbeddingMatrix, standardize: bool):
        spec = embedding.spec
        a = np.array(embedding.values)
        if standardize:
            a -= a.mean(axis=0)
            std = a.std(axis=0)
            std[std == 0] = 1.0
            a /= std
        self.spec = spec
        self.n = spec.sample_count
        self.m = spec.embed_dim
        self.p = spec.num_nodes
        self.ata = a.T @ a
        self.dims = spec.node_dims
        self.starts = np.asarray(spec.block_offsets[:-1])
        self.mask = np.ones((self.m, self.m))
        for j in range(self.p):
            s = spec.block_slice(j)
            self.mask[s, s] = 0.0
        node_of = np.repeat(np.arange(self.p), self.dims)
        self._exp_rows = node_of[:, None]
        self._exp_cols = node_of[None, :]
        self.eye = np.eye(self.m)

    def weight_matrix(self, c_arr: np.ndarray) -> np.ndarray:
        sq = c_arr * c_arr
        w = np.add.reduceat(np.add.reduceat(sq, self.starts, axis=0), self.starts, axis=1)
        np.fill_diagonal(w, 0.0)
        return w

    def expand(self, node_grad: np.ndarray) -> np.ndarray:
        return node_grad[self._exp_rows, self._exp_cols]


class _Workspace:
    def __init__(self, embeddings, similarity, hp: HyperParams):
        if not embeddings:
            raise ValueError("at least one task is required")
        self.hp = hp
        self.tasks = [_TaskWork(e, hp.standardize) for e in embeddings]
        n_tasks = len(self.tasks)
        if similarity is None:
            sim = np.full((n_tasks, n_tasks), 1.0)
            np.fill_diagonal(sim, 0.0)
        else:
            sim = similarity.values if isinstance(similarity, SimilarityMatrix) else np.asarray(similarity, dtype=float)
            if sim.shape != (n_tasks, n_tasks):
                raise ValueError(
                    f"similarity must be {n_tasks} x {n_tasks}, got {sim.shape}"
                )
        self.pairs = []
        if hp.coupling != "none" and hp.rho > 0:
            for l1 in range(n_tasks):
                for l2 in range(l1 + 1, n_tasks):
                    s = float(sim[l1, l2])
                    if s == 0.0:
                        continue
                    overlap = OverlapMap.from_global_ids(
                        self.tasks[l1].spec.global_ids, self.tasks[l2].spec.global_ids
                    )
                    if len(overlap):
                        grid_u = np.ix_(overlap.left, overlap.left)
                        grid_v = np.ix_(overlap.right, overlap.right)
                        self.pairs.append((l1, l2, overlap, s, grid_u, grid_v))

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)


def _broadcast_beta(beta, n_tasks: int) -> np.ndarray:
    arr = np.asarray(beta, dtype=float)
    if arr.ndim == 0:
        return np.full(n_tasks, float(arr))
    if arr.shape != (n_tasks,):
        raise ValueError(f"beta must be a scalar or length-{n_tasks} vector")
    return arr


def _evaluate(ws: _Workspace, c_list, beta, alpha, need_grad: bool):
    """Augmented objective (and gradients) at the current transition matrices.

    Returns (augmented value, plain objective, grads or None, per-task h,
    clamped power entries this evaluation).
    """
    hp = ws.hp
    beta_arr = _broadcast_beta(beta, ws.n_tasks)
    plain = 0.0
    grads = [None] * ws.n_tasks if need_grad else None
    h_list = []
    w_list = []
    clamped = 0

    for l, task in enumerate(ws.tasks):
        c_arr = c_list[l]
        ic = task.eye - c_arr
        r = task.ata @ ic
        plain += float(np.sum(ic * r)) / (2.0 * task.n)
        plain += hp.lambda_ * float(np.sum(np.abs(c_arr)))
        w = task.weight_matrix(c_arr)
        w_list.append(w)
        e_mat = _expm(w)
        h_list.append(float(np.trace(e_mat)) - task.p)
        if need_grad:
            grad = -r / task.n + hp.lambda_ * np.sign(c_arr)
            scale = beta_arr[l] + alpha * alpha * h_list[l]
            if scale != 0.0:
                grad += scale * 2.0 * task.expand(e_mat.T) * c_arr
            grads[l] = grad

    if ws.pairs:
        if hp.coupling == "dcd":
            parts = []
            for l, task in enumerate(ws.tasks):
                pows, _, _, t, n_cl = _transitive_parts(w_list[l], hp.c)
                clamped += n_cl
                chain = _chain_prep(pows) if need_grad else None
                parts.append((t, chain))
            four_c = 4.0 * hp.c
            for l1, l2, overlap, s, grid_u, grid_v in ws.pairs:
                t1, chain1 = parts[l1]
                t2, chain2 = parts[l2]
                t1_sub = t1[grid_u]
                t2_sub = t2[grid_v]
                diff = t1_sub - t2_sub
                plain += hp.rho * s * float(np.sum(diff * diff))
                if need_grad:
                    g1 = np.zeros_like(t1)
                    g1[grid_u] = four_c * t1_sub * (1.0 - t1_sub) * diff
                    g2 = np.zeros_like(t2)
                    g2[grid_v] = four_c * t2_sub * (1.0 - t2_sub) * (-diff)
                    gw1 = _chain_apply(g1, *chain1)
                    gw2 = _chain_apply(g2, *chain2)
                    grads[l1] += (
                        hp.rho * s * 2.0 * ws.tasks[l1].expand(gw1) * c_list[l1]
                    )
                    grads[l2] += (
                        hp.rho * s * 2.0 * ws.tasks[l2].expand(gw2) * c_list[l2]
                    )
        elif hp.coupling == "matrix_diff":
            for l1, l2, overlap, s, grid_u, grid_v in ws.pairs:
                diff = w_list[l1][grid_u] - w_list[l2][grid_v]
                plain += hp.rho * s * float(np.sum(diff * diff))
                if need_grad:
                    gw1 = np.zeros_like(w_list[l1])
                    gw1[grid_u] = 2.0 * diff
                    gw2 = np.zeros_like(w_list[l2])
                    gw2[grid_v] = -2.0 * diff
                    grads[l1] += (
                        hp.rho * s * 2.0 * ws.tasks[l1].expand(gw1) * c_list[l1]
                    )
                    grads[l2] += (
                        hp.rho * s * 2.0 * ws.tasks[l2].expand(gw2) * c_list[l2]
                    )

    h_arr = np.asarray(h_list)
    augmented = plain + float(np.dot(beta_arr, h_arr)) + 0.5 * alpha * alpha * float(
        np.dot(h_arr, h_arr)
    )
    if need_grad:
        for l, task in enumerate(ws.tasks):
            grads[l] *= task.mask
    return augmented, plain, grads, h_list, clamped


def _coerce_c_list(transitions, ws: _Workspace):
    c_list = []
    for l, t in enumerate(transitions):
        arr = t.values if isinstance(t, BlockTransitionMatrix) else np.asarray(t, dtype=float)
        m = ws.tasks[l].m
        if arr.shape != (m, m):
            raise ValueError(f"task {l}: C must be {m} x {m}, got {arr.shape}")
        c_list.append(np.array(arr, dtype=float))
    if len(c_list) != ws.n_tasks:
        raise ValueError("one transition matrix per task is required")
    return c_list


def objective(transitions, embeddings, similarity=None, hp: HyperParams | None = None) -> float:
    """Multi-task score: residuals + coupling penalty + L1, no constraint terms."""
    hp = (hp or HyperParams()).validate()
    ws = _Workspace(embeddings, similarity, hp)
    c_list = _coerce_c_list(transitions, ws)
    _, plain, _, _, _ = _evaluate(ws, c_list, 0.0, 0.0, need_grad=False)
    return plain


def augmented_objective(
    transitions,
    embeddings,
    similarity=None,
    hp: HyperParams | None = None,
    beta=0.0,
    alpha: float = 0.0,
) -> float:
    """objective plus the Lagrangian terms beta*h + (alpha^2/2) h^2 per task."""
    hp = (hp or HyperParams()).validate()
    ws = _Workspace(embeddings, similarity, hp)
    c_list = _coerce_c_list(transitions, ws)
    augmented, _, _, _, _ = _evaluate(ws, c_list, beta, alpha, need_grad=False)
    return augmented


def full_gradient(
    transitions,
    embeddings,
    similarity=None,
    hp: HyperParams | None = None,
    beta=0.0,
    alpha: float = 0.0,
) -> list[np.ndarray]:
    """Gradient of the augmented objective w.r.t. each task's C.

    The L1 term contributes the subgradient sign(C), taken as 0 at 0; entries
    inside diagonal blocks are masked to keep self-loops pinned at zero.
    """
    hp = (hp or HyperParams()).validate()
    ws = _Workspace(embeddings, similarity, hp)
    c_list = _coerce_c_list(transitions, ws)
    _, _, grads, _, _ = _evaluate(ws, c_list, beta, alpha, need_grad=True)
    return grads


# ---------------------------------------------------------------------------
# thresholding


def threshold_edges(w, omega: float):
    """Binarize weights at omega and repair any cycles.

    Edges are kept where the weight strictly exceeds omega; while the result
    contains a cycle, the smallest-weight edge on one cycle is dropped.
    Returns (0/1 adjacency, list of removed (i, j) index pairs).
    """
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    arr = _as_weight_array(w)
    adj = arr > omega
    np.fill_diagonal(adj, False)
    removed = []
    while True:
        cycle = find_cycle(adj)
        if cycle is None:
            break
        edges = [
            (cycle[k], cycle[(k + 1) % len(cycle)]) for k in range(len(cycle))
        ]
        weakest = min(edges, key=lambda e: arr[e])
        adj[weakest] = False
        removed.append(weakest)
    return adj.astype(int), removed


# ---------------------------------------------------------------------------
# fitting


class _Adam:
    def __init__(self, shapes, hp: HyperParams):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0
        self.lr = hp.learning_rate
        self.b1 = hp.adam_beta1
        self.b2 = hp.adam_beta2
        self.eps = hp.adam_eps

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


_LR_FLOOR_FACTOR = 1e-4
_LR_RESTART_BOOST = 32.0


def _minimize_inner(
    ws: _Workspace, c_list, beta, alpha, hp: HyperParams, trace, start_lr=None
):
    """Adam descent on the augmented objective at fixed (beta, alpha).

    Two phases.  Explore: run at start_lr until the best value stops
    improving by inner_tol (relative) for inner_window iterations (or the
    iteration budget demands annealing).  Anneal: halve the step every
    inner_window/2 iterations down to 1e-4 of the base rate.  Adam's
    scale-free steps orbit the quadratic-penalty valley with amplitude
    proportional to the step, so the anneal is what parks the constraint
    value near zero (weights are squared coefficients, so a step floor of
    1e-6 leaves constraint mass around 1e-12).  Returns as soon as the summed
    constraint value clears the outer stopping rule.
    """
    opt = _Adam([c.shape for c in c_list], hp)
    if start_lr is not None:
        opt.lr = start_lr
    window = max(4, hp.inner_window)
    segment = max(2, window // 2)
    lr_floor = hp.learning_rate * _LR_FLOOR_FACTOR
    levels = int(np.ceil(np.log2(max(2.0, opt.lr / lr_floor))))
    explore_cap = max(window, hp.max_inner - levels * segment)
    best = None
    last_progress = 0
    annealing = False
    next_decay = 0
    clamped = 0
    final = None
    for it in range(1, hp.max_inner + 1):
        augmented, plain, grads, h_list, n_cl = _evaluate(
            ws, c_list, beta, alpha, need_grad=True
        )
        clamped += n_cl
        if not np.isfinite(augmented):
            raise DivergenceError(
                f"non-finite objective at inner iteration {it}", trace
            )
        final = (plain, h_list)
        if it > 1 and sum(h_list) < 0.1 * hp.h_min:
            return it, final, clamped, opt.lr  # outer loop will stop
        if best is None or augmented < best - hp.inner_tol * max(1.0, abs(best)):
            best = augmented
            last_progress = it
        if not annealing and (it - last_progress >= window or it >= explore_cap):
            annealing = True
            next_decay = it
        if annealing and it >= next_decay:
            if opt.lr <= lr_floor:
                return it, final, clamped, opt.lr
            opt.lr *= 0.5
            next_decay = it + segment
        opt.step(c_list, grads)
    return hp.max_inner, final, clamped, opt.lr


def fit(
    embeddings,
    similarity=None,
    hp: HyperParams | None = None,
) -> FitResult:
    """Learn one DAG per task by the quadratic-penalty outer loop.

    Transition matrices start at zero.  Each outer round runs Adam on the
    augmented objective, then updates the dual variable by alpha times the
    summed constraint value and multiplies alpha by rate_r, stopping once the
    summed constraint drops below h_min.  If the outer cap is hit first, the
    iterate with the smallest constraint value is returned flagged as not
    converged.  Learned weights are thresholded at omega with cycle repair.
    """
    hp = (hp or HyperParams()).validate()
    ws = _Workspace(embeddings, similarity, hp)
    c_list = [np.zeros((t.m, t.m)) for t in ws.tasks]
    n_tasks = ws.n_tasks
    beta = np.zeros(n_tasks) if hp.per_task_dual else 0.0
    alpha = hp.alpha0

    trace = []
    h_trace = []
    snapshots = []
    clamp_total = 0
    converged = False
    outer_used = 0

    start_lr = hp.learning_rate
    for outer in range(1, hp.max_outer + 1):
        outer_used = outer
        inner_steps, (plain, h_list), clamped, end_lr = _minimize_inner(
            ws, c_list, beta, alpha, hp, trace, start_lr
        )
        clamp_total += clamped
        # restart near the annealed step: the dual update reshapes the
        # landscape mildly, and a full-rate restart would shake the parked
        # constraint loose every round
        start_lr = min(
            hp.learning_rate,
            max(end_lr * _LR_RESTART_BOOST, hp.learning_rate / 64.0),
        )
        sum_h = float(np.sum(h_list))
        beta_scalar = float(np.sum(beta)) if hp.per_task_dual else float(beta)
        trace.append((outer, inner_steps, plain, sum_h, beta_scalar, alpha))
        h_trace.append([float(h) for h in h_list])
        snapshots.append((sum_h, plain, [c.copy() for c in c_list]))
        if hp.per_task_dual:
            beta = beta + alpha * np.asarray(h_list)
        else:
            beta = beta + alpha * sum_h
        alpha = min(alpha * hp.rate_r, hp.alpha_max)
        if sum_h < hp.h_min:
            converged = True
            break

    if not converged:
        # Of the near-feasible snapshots prefer the best-scoring one; growing
        # duals can crush all weights, which looks maximally feasible but is
        # useless.  Residual constraint mass below the near-feasibility cut is
        # removed by thresholding anyway.
        feasible = [s for s in snapshots if s[0] <= max(hp.h_min, 1e-4)]
        pool = feasible or snapshots
        c_list = min(pool, key=lambda s: (s[1], s[0]))[2]

    transitions = []
    weights = []
    adjacencies = []
    removed_edges = []
    for l, task in enumerate(ws.tasks):
        c_final = c_list[l] * task.mask
        w = task.weight_matrix(c_final)
        adjacency, removed = threshold_edges(w, hp.omega)
        assert find_cycle(adjacency > 0) is None
        transitions.append(BlockTransitionMatrix(values=c_final, spec=task.spec))
        weights.append(WeightMatrix(values=w, global_ids=task.spec.global_ids))
        adjacencies.append(adjacency)
        removed_edges.append(removed)

    return FitResult(
        transitions=transitions,
        weights=weights,
        adjacencies=adjacencies,
        objective_trace=trace,
        h_trace=h_trace,
        outer_iterations=outer_used,
        beta=beta,
        converged=converged,
        diagnostics={
            "power_clamped": clamp_total,
            "removed_edges": removed_edges,
        },
    )
