"""
Tests for the regression solvers.
"""

import logging

import numpy as np
import pytest

from fastattribution import (
    BoundsError,
    DesignMatrix,
    SingularSystemError,
    cross_validate_lasso,
    solve_constrained_wls,
    solve_lasso,
    solve_wls,
)
from fastattribution.regress import lasso_gradient, lasso_lambda_max, solve_constrained_lstsq


def random_design(rng: np.random.Generator, m: int = 60, n: int = 6, weighted: bool = True) -> DesignMatrix:
    features = (rng.random((m, n)) < 0.5).astype(float)
    coefficients = rng.normal(size=n)
    targets = features @ coefficients + 0.7 + 0.1 * rng.normal(size=m)
    weights = rng.uniform(0.5, 2.0, size=m) if weighted else None
    return DesignMatrix(features, targets, weights)


class TestDesignMatrix:
    """Tests for DesignMatrix validation."""

    def test_shapes(self):
        design = DesignMatrix.from_rows([[1, 0], [0, 1], [1, 1]], [1.0, 2.0, 3.0])

        assert design.rows == 3
        assert design.cols == 2
        assert np.all(design.weights == 1.0)

    def test_non_binary_entries(self):
        with pytest.raises(BoundsError):
            DesignMatrix.from_rows([[0.5, 1]], [1.0])

    def test_non_positive_weights(self):
        with pytest.raises(BoundsError):
            DesignMatrix.from_rows([[1, 0]], [1.0], weights=[0.0])

    def test_length_mismatch(self):
        with pytest.raises(BoundsError):
            DesignMatrix.from_rows([[1, 0], [0, 1]], [1.0])


class TestWLS:
    """Tests for weighted least squares."""

    def test_exact_recovery(self):
        design = DesignMatrix.from_rows([[1, 0], [0, 1], [1, 1]], [3.0, 5.0, 8.0])

        result = solve_wls(design, fit_intercept=False)

        assert result.coefficients == pytest.approx([3.0, 5.0])
        assert result.intercept == 0.0

    def test_intercept(self):
        design = DesignMatrix.from_rows([[0, 0], [1, 0], [0, 1], [1, 1]], [1.0, 3.0, 6.0, 8.0])

        result = solve_wls(design)

        assert result.intercept == pytest.approx(1.0)
        assert result.coefficients == pytest.approx([2.0, 5.0])

    def test_matches_numpy_lstsq(self):
        rng = np.random.default_rng(3)
        design = random_design(rng)
        root = np.sqrt(design.weights)
        augmented = np.column_stack([np.ones(design.rows), design.features]) * root[:, None]
        reference, *_ = np.linalg.lstsq(augmented, design.targets * root, rcond=None)

        result = solve_wls(design)

        assert result.intercept == pytest.approx(reference[0], abs=1e-9)
        assert result.coefficients == pytest.approx(reference[1:], abs=1e-9)

    def test_duplicate_columns_are_singular(self):
        design = DesignMatrix.from_rows([[1, 1, 0], [0, 0, 1], [1, 1, 1], [0, 0, 0]], [1.0, 2.0, 3.0, 0.0])

        with pytest.raises(SingularSystemError) as exc_info:
            solve_wls(design, fit_intercept=False)

        assert len(exc_info.value.columns) == 1
        assert exc_info.value.columns[0] in (0, 1)


class TestConstrainedWLS:
    """Tests for sum-constrained weighted least squares."""

    @pytest.mark.parametrize("seed", range(5))
    def test_constraint_residual(self, seed):
        rng = np.random.default_rng(seed)
        design = random_design(rng, n=5)

        result = solve_constrained_wls(design, 4.25)

        assert abs(result.coefficients.sum() - 4.25) < 1e-12

    def test_constraint_binding_on_consistent_data(self):
        """Data already satisfying the constraint is fit exactly."""
        features = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0], [0, 1, 1]], dtype=float)
        truth = np.array([1.0, 2.0, 3.0])
        design = DesignMatrix(features, features @ truth)

        result = solve_constrained_wls(design, 6.0)

        assert result.coefficients == pytest.approx(truth)

    def test_single_column(self):
        design = DesignMatrix.from_rows([[1], [0]], [2.0, 0.0])

        assert solve_constrained_wls(design, 5.0).coefficients == pytest.approx([5.0])

    def test_min_norm_fallback_satisfies_constraint(self):
        design = DesignMatrix.from_rows([[1, 1, 0], [1, 1, 0]], [1.0, 1.0])

        with pytest.raises(SingularSystemError):
            solve_constrained_wls(design, 3.0)
        result = solve_constrained_lstsq(design, 3.0)

        assert result.coefficients.sum() == pytest.approx(3.0, abs=1e-12)


class TestLasso:
    """Tests for the coordinate-descent lasso."""

    @pytest.mark.parametrize("seed", range(5))
    def test_zero_penalty_matches_wls(self, seed):
        rng = np.random.default_rng(100 + seed)
        design = random_design(rng)

        lasso = solve_lasso(design, 0.0, max_iter=100000, tol=1e-13)
        wls = solve_wls(design)

        assert lasso.converged
        assert np.max(np.abs(lasso.coefficients - wls.coefficients)) < 1e-6
        assert lasso.intercept == pytest.approx(wls.intercept, abs=1e-6)

    @pytest.mark.parametrize("seed", range(100))
    def test_kkt_conditions(self, seed):
        """Zero coefficients have |g| ≤ λ; nonzero ones have g = −sign(β)·λ."""
        rng = np.random.default_rng(seed)
        design = random_design(rng, m=40, n=5, weighted=seed % 2 == 0)
        lam = 0.3 * lasso_lambda_max(design)

        result = solve_lasso(design, lam, max_iter=100000, tol=1e-12)
        gradient, beta = lasso_gradient(design, result)

        for g, b in zip(gradient, beta, strict=True):
            if b == 0.0:
                assert abs(g) <= lam + 1e-8
            else:
                assert g == pytest.approx(-np.sign(b) * lam, abs=1e-8)

    def test_lambda_max_zeroes_everything(self):
        design = random_design(np.random.default_rng(1))

        result = solve_lasso(design, lasso_lambda_max(design) * 1.0001)

        assert np.all(result.coefficients == 0.0)
        assert result.intercept == pytest.approx(np.average(design.targets, weights=design.weights))

    def test_objective_never_increases(self):
        design = random_design(np.random.default_rng(2))

        path = solve_lasso(design, 0.05).objective_path

        assert all(b <= a + 1e-12 for a, b in zip(path, path[1:]))

    def test_constant_column_gets_zero(self):
        design = DesignMatrix.from_rows([[1, 0], [1, 1], [1, 0], [1, 1]], [1.0, 2.0, 1.0, 2.0])

        result = solve_lasso(design, 0.0)

        assert result.coefficients[0] == 0.0
        assert result.coefficients[1] == pytest.approx(1.0)

    def test_not_converged_is_flagged(self, caplog):
        design = random_design(np.random.default_rng(4))

        with caplog.at_level(logging.WARNING, logger="fastmvc.attribution"):
            result = solve_lasso(design, 1e-4, max_iter=1, tol=1e-15)

        assert result.not_converged
        assert result.iterations == 1
        assert any("did not converge" in r.getMessage() for r in caplog.records)

    def test_negative_penalty(self):
        with pytest.raises(BoundsError):
            solve_lasso(random_design(np.random.default_rng(0)), -1.0)


class TestCrossValidation:
    """Tests for λ selection."""

    def test_grid_and_choice(self):
        design = random_design(np.random.default_rng(5), m=80)

        lam, grid, errors = cross_validate_lasso(design, np.random.default_rng(0), folds=5, grid_size=10)

        assert grid.shape == (10,) and errors.shape == (10,)
        assert grid[0] == pytest.approx(lasso_lambda_max(design))
        assert np.all(np.diff(grid) < 0)
        assert lam == grid[int(np.argmin(errors))]

    def test_deterministic_for_fixed_rng(self):
        design = random_design(np.random.default_rng(6))

        first = cross_validate_lasso(design, np.random.default_rng(11))
        second = cross_validate_lasso(design, np.random.default_rng(11))

        assert first[0] == second[0]
        assert np.array_equal(first[2], second[2])

    def test_constant_targets(self):
        design = DesignMatrix.from_rows([[1, 0], [0, 1], [1, 1]], [2.0, 2.0, 2.0])

        lam, _, _ = cross_validate_lasso(design, np.random.default_rng(0))

        assert lam == 0.0
