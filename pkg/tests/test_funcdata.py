"""Quadrature, FPCA, and interval-averaging tests."""

import numpy as np
import pytest

from mmdag.funcdata import (
    BasisSet,
    FunctionalSampleSet,
    fpca_decompose,
    fpca_project,
    fpca_reconstruct,
    interval_average,
    quadrature_inner_product,
    trapezoid_weights,
)

GRID = np.linspace(0.0, 1.0, 201)


def _samples(values, grid=GRID, node_id=0):
    return FunctionalSampleSet(grid=grid, values=values, node_id=node_id)


def _gram(basis: BasisSet) -> np.ndarray:
    w = trapezoid_weights(basis.grid)
    return (basis.basis * w) @ basis.basis.T


# ---------------------------------------------------------------------------
# quadrature


def test_inner_product_of_ones_is_one():
    ones = np.ones_like(GRID)
    assert quadrature_inner_product(ones, ones, GRID) == pytest.approx(1.0)


def test_inner_product_fourier_orthogonality():
    f = np.sin(2 * np.pi * GRID)
    g = np.cos(2 * np.pi * GRID)
    assert abs(quadrature_inner_product(f, g, GRID)) < 1e-4


def test_inner_product_normalized_sine():
    # closed form: integral of 2 sin^2(2 pi t) over [0, 1] is exactly 1
    f = np.sqrt(2.0) * np.sin(2 * np.pi * GRID)
    assert quadrature_inner_product(f, f, GRID) == pytest.approx(1.0, abs=1e-3)


def test_inner_product_length_mismatch():
    with pytest.raises(ValueError, match="length mismatch"):
        quadrature_inner_product(np.ones(5), np.ones(4), np.linspace(0, 1, 5))


def test_trapezoid_weights_sum_to_interval():
    grid = np.array([0.0, 0.1, 0.4, 1.0])
    assert trapezoid_weights(grid).sum() == pytest.approx(1.0)
    with pytest.raises(ValueError, match="strictly increasing"):
        trapezoid_weights(np.array([0.0, 0.5, 0.5, 1.0]))


# ---------------------------------------------------------------------------
# decomposition


def test_rank_one_data_recovers_the_curve():
    rng = np.random.default_rng(0)
    curve = np.sqrt(2.0) * np.sin(2 * np.pi * GRID)
    u = rng.normal(size=50)
    basis, scores = fpca_decompose(_samples(np.outer(u, curve)), 1)
    total = basis.explained_variance.sum()
    # rank-one data: a single component carries everything
    assert basis.explained_variance[0] / max(total, 1e-300) == pytest.approx(
        1.0, abs=1e-8
    )
    alignment = quadrature_inner_product(basis.basis[0], curve, GRID)
    assert abs(alignment) == pytest.approx(1.0, abs=1e-6)
    recon = scores.scores @ basis.basis
    np.testing.assert_allclose(recon, np.outer(u, curve), atol=1e-8)


def test_zero_data_gives_zero_scores_and_degenerate_flag():
    basis, scores = fpca_decompose(_samples(np.zeros((7, GRID.size))), 1)
    np.testing.assert_array_equal(scores.scores, 0.0)
    assert basis.degenerate
    np.testing.assert_allclose(basis.explained_variance, 0.0, atol=1e-15)


def test_two_component_variance_ratio_matches_analytic_covariance():
    # oracle: the coefficient covariance is diag(4, 1), so the eigenvalue
    # ratio of the covariance operator is exactly 4
    rng = np.random.default_rng(7)
    nu1 = np.sqrt(2.0) * np.sin(2 * np.pi * GRID)
    nu2 = np.sqrt(2.0) * np.cos(2 * np.pi * GRID)
    coef = rng.normal(size=(2000, 2)) * [2.0, 1.0]
    data = coef @ np.vstack([nu1, nu2])
    basis, _ = fpca_decompose(_samples(data), 2)
    ratio = basis.explained_variance[0] / basis.explained_variance[1]
    assert ratio == pytest.approx(4.0, rel=0.10)


def test_component_count_exceeding_rank_is_rejected():
    with pytest.raises(ValueError, match="exceeds"):
        fpca_decompose(_samples(np.ones((3, GRID.size))), 4)


def test_auto_component_count_by_explained_variance():
    rng = np.random.default_rng(3)
    nu1 = np.sqrt(2.0) * np.sin(2 * np.pi * GRID)
    nu2 = np.sqrt(2.0) * np.cos(2 * np.pi * GRID)
    coef = rng.normal(size=(500, 2)) * [10.0, 1.0]
    data = coef @ np.vstack([nu1, nu2])
    basis, _ = fpca_decompose(_samples(data), None, var_threshold=0.95)
    assert basis.n_components == 1
    basis, _ = fpca_decompose(_samples(data), None, var_threshold=0.999)
    assert basis.n_components == 2


def test_sign_convention_largest_value_positive():
    rng = np.random.default_rng(11)
    data = rng.normal(size=(40, GRID.size))
    basis, _ = fpca_decompose(_samples(data), 3)
    for row in basis.basis:
        assert row[np.argmax(np.abs(row))] > 0


# ---------------------------------------------------------------------------
# projection / reconstruction


@pytest.fixture
def fourier_pair():
    nu1 = np.sqrt(2.0) * np.sin(2 * np.pi * GRID)
    nu2 = np.sqrt(2.0) * np.cos(2 * np.pi * GRID)
    return BasisSet(
        grid=GRID, basis=np.vstack([nu1, nu2]), explained_variance=np.ones(2)
    )


def test_project_own_basis_curve(fourier_pair):
    coords = fpca_project(fourier_pair.basis[0], fourier_pair)
    np.testing.assert_allclose(coords, [1.0, 0.0], atol=1e-6)


def test_project_is_linear(fourier_pair):
    x = 2.0 * fourier_pair.basis[0] + 3.0 * fourier_pair.basis[1]
    np.testing.assert_allclose(fpca_project(x, fourier_pair), [2.0, 3.0], atol=1e-6)


def test_project_orthogonal_complement_is_zero(fourier_pair):
    # Gram-Schmidt a third curve against the basis, then project it
    w = trapezoid_weights(GRID)
    x = np.sqrt(2.0) * np.sin(4 * np.pi * GRID)
    for row in fourier_pair.basis:
        x = x - np.dot(w * x, row) * row
    np.testing.assert_allclose(fpca_project(x, fourier_pair), 0.0, atol=1e-4)


def test_reconstruct_unit_scores(fourier_pair):
    np.testing.assert_array_equal(
        fpca_reconstruct(np.array([1.0, 0.0]), fourier_pair), fourier_pair.basis[0]
    )


def test_project_reconstruct_round_trip(fourier_pair):
    x = 0.3 * fourier_pair.basis[0] - 1.7 * fourier_pair.basis[1]
    back = fpca_reconstruct(fpca_project(x, fourier_pair), fourier_pair)
    np.testing.assert_allclose(back, x, atol=1e-6)


def test_reconstruction_error_non_increasing_in_rank():
    rng = np.random.default_rng(5)
    coef = rng.normal(size=(60, 4)) * [3.0, 2.0, 1.0, 0.5]
    curves = np.vstack(
        [np.sqrt(2.0) * np.sin(2 * np.pi * k * GRID) for k in range(1, 5)]
    )
    data = coef @ curves + 0.01 * rng.normal(size=(60, GRID.size))
    samples = _samples(data)
    w = trapezoid_weights(GRID)
    errors = []
    for k in range(1, 5):
        basis, scores = fpca_decompose(samples, k)
        resid = data - scores.scores @ basis.basis
        errors.append(float(np.sum(resid * resid * w)))
    assert all(e1 >= e2 - 1e-12 for e1, e2 in zip(errors, errors[1:]))


# ---------------------------------------------------------------------------
# interval averaging


def test_interval_average_two_bins():
    np.testing.assert_allclose(
        interval_average(np.arange(1.0, 11.0), 2), [3.0, 8.0]
    )


def test_interval_average_constant():
    np.testing.assert_allclose(interval_average(np.full(7, 4.2), 3), [4.2, 4.2, 4.2])


def test_interval_average_identity_when_bins_match():
    x = np.array([3.0, 1.0, 4.0, 1.0, 5.0])
    np.testing.assert_array_equal(interval_average(x, 5), x)


def test_interval_average_remainder_goes_to_leading_bins():
    # 7 points into 3 bins: sizes 3, 2, 2
    x = np.arange(7.0)
    np.testing.assert_allclose(interval_average(x, 3), [1.0, 3.5, 5.5])


def test_interval_average_is_linear():
    rng = np.random.default_rng(2)
    x = rng.normal(size=23)
    y = rng.normal(size=23)
    np.testing.assert_allclose(
        interval_average(2.5 * x + y, 4),
        2.5 * interval_average(x, 4) + interval_average(y, 4),
        atol=1e-12,
    )


def test_interval_average_rejects_too_many_bins():
    with pytest.raises(ValueError, match="n_bins"):
        interval_average(np.ones(3), 4)


def test_interval_average_rows_of_a_matrix():
    data = np.vstack([np.arange(1.0, 11.0), np.arange(11.0, 21.0)])
    np.testing.assert_allclose(interval_average(data, 2), [[3.0, 8.0], [13.0, 18.0]])


# ---------------------------------------------------------------------------
# invariants


def test_basis_orthonormal_under_quadrature():
    rng = np.random.default_rng(13)
    grid = np.sort(rng.uniform(0, 1, size=80))
    grid[0], grid[-1] = 0.0, 1.0
    data = rng.normal(size=(30, 80))
    basis, _ = fpca_decompose(FunctionalSampleSet(grid=grid, values=data, node_id=1), 5)
    np.testing.assert_allclose(_gram(basis), np.eye(5), atol=1e-6)


def test_rank_k_projection_beats_random_rotations():
    rng = np.random.default_rng(17)
    curves = np.vstack(
        [np.sqrt(2.0) * np.sin(2 * np.pi * k * GRID) for k in range(1, 5)]
    )
    data = (rng.normal(size=(80, 4)) * [3.0, 2.0, 1.0, 0.4]) @ curves
    samples = _samples(data)
    w = trapezoid_weights(GRID)
    k = 2
    basis, scores = fpca_decompose(samples, k)
    resid = data - scores.scores @ basis.basis
    fpca_err = float(np.sum(resid * resid * w))
    full, _ = fpca_decompose(samples, 4)
    for trial in range(20):
        rot = np.linalg.qr(rng.normal(size=(4, 4)))[0][:, :k]
        cand = rot.T @ full.basis
        proj = (data * w) @ cand.T
        resid = data - proj @ cand
        rand_err = float(np.sum(resid * resid * w))
        assert fpca_err <= rand_err + 1e-9


def test_explained_variance_totals():
    rng = np.random.default_rng(23)
    data = rng.normal(size=(12, 40))
    grid = np.linspace(0, 1, 40)
    samples = FunctionalSampleSet(grid=grid, values=data, node_id=2)
    w = trapezoid_weights(grid)
    total = float(np.sum(data * data * w)) / data.shape[0]
    partial, _ = fpca_decompose(samples, 5)
    assert partial.explained_variance.sum() <= total + 1e-10
    full, _ = fpca_decompose(samples, 12)
    assert full.explained_variance.sum() == pytest.approx(total, abs=1e-8)


def test_centering_flag_subtracts_the_mean_curve():
    rng = np.random.default_rng(29)
    shift = np.sin(2 * np.pi * GRID) + 2.0
    data = shift + 0.1 * rng.normal(size=(25, GRID.size))
    centered, scores = fpca_decompose(_samples(data), 1, center=True)
    # centered scores fluctuate around zero
    assert abs(scores.scores.mean()) < 1e-10


def test_sample_set_validation():
    with pytest.raises(ValueError, match="strictly increasing"):
        FunctionalSampleSet(grid=np.array([0.0, 0.0, 1.0]), values=np.ones((2, 3)), node_id=0)
    with pytest.raises(ValueError, match="inside"):
        FunctionalSampleSet(grid=np.array([-0.1, 1.0]), values=np.ones((2, 2)), node_id=0)
    with pytest.raises(ValueError, match="finite"):
        FunctionalSampleSet(
            grid=np.array([0.0, 1.0]), values=np.array([[1.0, np.inf]]), node_id=0
        )
