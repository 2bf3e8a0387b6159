"""Functional data: dense curves on a grid, trapezoid quadrature, FPCA, interval averaging.

Curves live on a shared strictly increasing grid inside [0, 1].  All integrals
are discretized with composite trapezoid weights, so every inner product below
is exact for piecewise-linear integrands and grid-agnostic otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FunctionalSampleSet",
    "BasisSet",
    "ScoreMatrix",
    "FpcaConfig",
    "trapezoid_weights",
    "quadrature_inner_product",
    "fpca_decompose",
    "fpca_project",
    "fpca_reconstruct",
    "interval_average",
]

_EIGENVALUE_FLOOR = 1e-12


def _freeze(obj, **arrays):
    """Attach read-only float arrays to a frozen dataclass instance."""
    for name, arr in arrays.items():
        arr = np.array(arr, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(obj, name, arr)


def trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    """Composite trapezoid quadrature weights for a strictly increasing grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid must be one-dimensional with at least 2 points")
    steps = np.diff(grid)
    if np.any(steps <= 0):
        raise ValueError("grid must be strictly increasing")
    w = np.zeros_like(grid)
    w[:-1] += steps / 2.0
    w[1:] += steps / 2.0
    return w


def quadrature_inner_product(f: np.ndarray, g: np.ndarray, grid: np.ndarray) -> float:
    """Trapezoid approximation of the L2 inner product of two curves on `grid`."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if not (f.shape == g.shape == grid.shape):
        raise ValueError(
            f"length mismatch: f has shape {f.shape}, g {g.shape}, grid {grid.shape}"
        )
    return float(np.dot(trapezoid_weights(grid), f * g))


@dataclass(frozen=True)
class FunctionalSampleSet:
    """N curves for one functional node, sampled on a common grid in [0, 1]."""

    grid: np.ndarray
    values: np.ndarray  # N x G, row n is sample n evaluated on the grid
    node_id: int

    def __post_init__(self):
        _freeze(self, grid=self.grid, values=self.values)
        if self.grid.ndim != 1 or self.grid.size < 2:
            raise ValueError("grid must be one-dimensional with at least 2 points")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if self.grid[0] < 0.0 or self.grid[-1] > 1.0:
            raise ValueError("grid must lie inside [0, 1]")
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.size:
            raise ValueError(
                f"values must be N x {self.grid.size}, got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_points(self) -> int:
        return self.grid.size


@dataclass(frozen=True)
class BasisSet:
    """K orthonormal basis curves (w.r.t. trapezoid quadrature) on a grid.

    `degenerate` marks bases where some retained component has (numerically)
    zero variance, so its direction is an arbitrary orthonormal completion.
    """

    grid: np.ndarray
    basis: np.ndarray  # K x G
    explained_variance: np.ndarray  # K, non-increasing
    degenerate: bool = False

    def __post_init__(self):
        _freeze(
            self,
            grid=self.grid,
            basis=self.basis,
            explained_variance=self.explained_variance,
        )
        if self.basis.ndim != 2 or self.basis.shape[1] != self.grid.size:
            raise ValueError("basis must be K x len(grid)")
        ev = self.explained_variance
        if ev.shape != (self.basis.shape[0],):
            raise ValueError("explained_variance must have one entry per basis curve")
        if np.any(ev < -1e-12):
            raise ValueError("explained_variance must be nonnegative")
        if np.any(np.diff(ev) > 1e-9 * max(1.0, float(ev[0]) if ev.size else 1.0)):
            raise ValueError("explained_variance must be non-increasing")

    @property
    def n_components(self) -> int:
        return self.basis.shape[0]


@dataclass(frozen=True)
class ScoreMatrix:
    """Per-sample coefficients (N x K) for a matching BasisSet."""

    scores: np.ndarray

    def __post_init__(self):
        _freeze(self, scores=self.scores)
        if self.scores.ndim != 2:
            raise ValueError("scores must be two-dimensional")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")

    @property
    def n_components(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class FpcaConfig:
    """How functional nodes are reduced to score vectors.

    n_components fixes K; when None, K is the smallest count whose cumulative
    explained variance reaches var_threshold.  Centering defaults to off: the
    decomposition model has no mean term and the synthetic generator emits
    zero-mean curves.
    """

    n_components: int | None = None
    center: bool = False
    var_threshold: float = 0.95

    def __post_init__(self):
        if self.n_components is not None and self.n_components < 1:
            raise ValueError("n_components must be a positive integer")
        if not 0.0 < self.var_threshold <= 1.0:
            raise ValueError("var_threshold must lie in (0, 1]")


def fpca_decompose(
    data: FunctionalSampleSet,
    n_components: int | None,
    center: bool = False,
    var_threshold: float = 0.95,
) -> tuple[BasisSet, ScoreMatrix]:
    """Top-K eigenfunctions of the empirical covariance operator plus scores.

    The covariance operator is discretized with trapezoid quadrature weights,
    symmetrized through the half-weight transform, and eigendecomposed; scores
    are quadrature projections of the (optionally centered) curves onto the
    eigenfunctions.  Each eigenfunction is flipped so its largest-magnitude
    grid value is positive, which makes the decomposition deterministic.
    """
    n, g = data.values.shape
    x = np.array(data.values, dtype=float)
    if center:
        x -= x.mean(axis=0)
    w = trapezoid_weights(data.grid)
    sqrt_w = np.sqrt(w)

    y = x * sqrt_w  # curves in the half-weight coordinates
    cov = (y.T @ y) / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.clip(eigvals[::-1], 0.0, None)
    eigvecs = eigvecs[:, ::-1]

    max_k = min(n, g)
    if n_components is None:
        total = float(eigvals.sum())
        if total <= 0.0:
            k = 1
        else:
            reached = np.cumsum(eigvals[:max_k]) >= var_threshold * total - 1e-15
            k = int(np.argmax(reached)) + 1 if reached.any() else max_k
    else:
        k = int(n_components)
        if k > max_k:
            raise ValueError(f"n_components={k} exceeds min(N, G)={max_k}")

    components = eigvecs[:, :k]
    basis = (components / sqrt_w[:, None]).T  # back to curve coordinates
    # deterministic sign: largest-magnitude grid value of each curve positive
    anchor = np.argmax(np.abs(basis), axis=1)
    signs = np.sign(basis[np.arange(k), anchor])
    signs[signs == 0] = 1.0
    basis *= signs[:, None]

    scores = y @ (components * signs)
    floor = _EIGENVALUE_FLOOR * max(1.0, float(eigvals[0]) if eigvals.size else 1.0)
    degenerate = bool(k > 0 and eigvals[k - 1] <= floor)
    basis_set = BasisSet(
        grid=data.grid,
        basis=basis,
        explained_variance=eigvals[:k],
        degenerate=degenerate,
    )
    return basis_set, ScoreMatrix(scores=scores)


def fpca_project(x: np.ndarray, basis: BasisSet) -> np.ndarray:
    """Quadrature projection of a curve onto each basis curve."""
    x = np.asarray(x, dtype=float)
    if x.shape != basis.grid.shape:
        raise ValueError(
            f"curve has shape {x.shape}, basis grid has {basis.grid.shape}"
        )
    w = trapezoid_weights(basis.grid)
    return basis.basis @ (w * x)


def fpca_reconstruct(scores: np.ndarray, basis: BasisSet) -> np.ndarray:
    """Linear combination of basis curves with the given coefficients."""
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (basis.n_components,):
        raise ValueError(
            f"expected {basis.n_components} scores, got shape {scores.shape}"
        )
    return scores @ basis.basis


def interval_average(x: np.ndarray, n_bins: int) -> np.ndarray:
    """Mean of `x` over contiguous, nearly equal index bins (along the last axis).

    The grid index range splits into `n_bins` bins whose sizes differ by at
    most one, any remainder going to the leading bins.
    """
    x = np.asarray(x, dtype=float)
    g = x.shape[-1]
    if not 1 <= n_bins <= g:
        raise ValueError(f"n_bins must lie in [1, {g}], got {n_bins}")
    base, rem = divmod(g, n_bins)
    sizes = np.array([base + 1] * rem + [base] * (n_bins - rem))
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    return np.add.reduceat(x, starts, axis=-1) / sizes
