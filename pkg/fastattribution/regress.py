"""
Small dense regression solvers behind the surrogate attribution methods.

Systems here have at most 30 columns, so weighted least squares goes
through the normal equations with a Cholesky factorization, and the lasso
runs cyclic coordinate descent on the Gram matrix.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from fastattribution.exceptions import BoundsError, SingularSystemError
from fastattribution.logging import get_logger


logger = get_logger("regress")

CONDITION_WARNING = 1e10


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """
    Binary membership design with targets and positive sample weights.

    Attributes:
        features: m×n array of 0/1 membership indicators.
        targets: Length-m target values.
        weights: Length-m positive sample weights (all ones when omitted).

    Example:
        ```python
        design = DesignMatrix.from_rows([[1, 0], [0, 1], [1, 1]], [3.0, 5.0, 8.0])
        solve_wls(design, fit_intercept=False).coefficients  # [3., 5.]
        ```
    """

    features: np.ndarray
    targets: np.ndarray
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=float)
        targets = np.asarray(self.targets, dtype=float)
        if features.ndim != 2:
            raise BoundsError("features must be a two-dimensional array")
        m, _ = features.shape
        if m < 1:
            raise BoundsError("design needs at least one row")
        weights = np.ones(m) if self.weights is None else np.asarray(self.weights, dtype=float)
        if targets.shape != (m,) or weights.shape != (m,):
            raise BoundsError(f"targets and weights must have length {m}")
        if not np.all(weights > 0):
            raise BoundsError("sample weights must be positive")
        if not np.all((features == 0) | (features == 1)):
            raise BoundsError("design entries must be 0 or 1")
        if not (np.all(np.isfinite(targets)) and np.all(np.isfinite(weights))):
            raise BoundsError("targets and weights must be finite")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_rows(cls, rows, targets, weights=None) -> "DesignMatrix":
        return cls(np.asarray(rows, dtype=float), np.asarray(targets, dtype=float), weights)

    @property
    def rows(self) -> int:
        return self.features.shape[0]

    @property
    def cols(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True, eq=False)
class RegressionResult:
    """
    Fitted linear model on the original feature scale.

    Attributes:
        coefficients: One coefficient per column.
        intercept: Fitted intercept (0 when suppressed).
        converged: False when an iterative solver stopped at max_iter.
        iterations: Coordinate-descent sweeps performed (0 for direct solves).
        objective_path: Lasso objective after each sweep.
        condition_number: Condition number of the normal equations, direct solves only.
        standardized: Lasso coefficients on the standardized scale.
    """

    coefficients: np.ndarray
    intercept: float = 0.0
    converged: bool = True
    iterations: int = 0
    objective_path: tuple[float, ...] = ()
    condition_number: float | None = None
    standardized: np.ndarray | None = None

    @property
    def not_converged(self) -> bool:
        return not self.converged

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=float) @ self.coefficients + self.intercept


def _weighted_center(x: np.ndarray, y: np.ndarray, w: np.ndarray):
    share = w / w.sum()
    x_mean = share @ x
    y_mean = float(share @ y)
    return x - x_mean, y - y_mean, x_mean, y_mean


def _check_rank(a: np.ndarray) -> None:
    _, r, pivots = linalg.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    cols = a.shape[1]
    if diag.size == 0 or diag[0] == 0.0:
        raise SingularSystemError(range(cols))
    tol = max(a.shape) * np.finfo(float).eps * diag[0]
    rank = int(np.sum(diag > tol))
    if rank < cols:
        raise SingularSystemError(pivots[rank:])


def _solve_arrays(x: np.ndarray, y: np.ndarray, w: np.ndarray, fit_intercept: bool) -> RegressionResult:
    if fit_intercept:
        x_c, y_c, x_mean, y_mean = _weighted_center(x, y, w)
    else:
        x_c, y_c, x_mean, y_mean = x, y, np.zeros(x.shape[1]), 0.0
    root = np.sqrt(w)
    a = x_c * root[:, None]
    b = y_c * root
    _check_rank(a)

    gram = a.T @ a
    condition = float(np.linalg.cond(gram))
    if condition > CONDITION_WARNING:
        logger.warning(
            f"ill-conditioned normal equations (cond={condition:.3e})",
            extra={"condition_number": condition, "columns": x.shape[1]},
        )
    factor = linalg.cho_factor(gram)
    beta = linalg.cho_solve(factor, a.T @ b)
    intercept = y_mean - float(x_mean @ beta) if fit_intercept else 0.0
    return RegressionResult(coefficients=beta, intercept=intercept, condition_number=condition)


def solve_wls(design: DesignMatrix, fit_intercept: bool = True) -> RegressionResult:
    """
    Weighted least squares minimizing Σ w_i (y_i − β₀ − x_iᵀβ)².

    Raises:
        SingularSystemError: If the (centered) weighted design is rank deficient.
    """
    return _solve_arrays(design.features, design.targets, design.weights, fit_intercept)


def _eliminate_last(design: DesignMatrix, constraint_total: float):
    x = design.features
    last = x[:, -1]
    reduced = x[:, :-1] - last[:, None]
    targets = design.targets - last * constraint_total
    return reduced, targets


def _recover_last(free: np.ndarray, constraint_total: float) -> np.ndarray:
    last = constraint_total - math.fsum(free.tolist())
    return np.append(free, last)


def solve_constrained_wls(
    design: DesignMatrix,
    constraint_total: float,
    fit_intercept: bool = False,
) -> RegressionResult:
    """
    Weighted least squares subject to Σ_j β_j = constraint_total.

    The last coefficient is eliminated as constraint_total − Σ_{j<n} β_j and
    the remaining n−1 are fit by ``solve_wls`` on the transformed design.

    Raises:
        SingularSystemError: If the transformed design is rank deficient.
    """
    if design.cols == 1:
        beta = np.array([float(constraint_total)])
        intercept = 0.0
        if fit_intercept:
            share = design.weights / design.weights.sum()
            intercept = float(share @ (design.targets - design.features[:, 0] * constraint_total))
        return RegressionResult(coefficients=beta, intercept=intercept)
    reduced, targets = _eliminate_last(design, constraint_total)
    sub = _solve_arrays(reduced, targets, design.weights, fit_intercept)
    return RegressionResult(
        coefficients=_recover_last(sub.coefficients, constraint_total),
        intercept=sub.intercept,
        condition_number=sub.condition_number,
    )


def solve_constrained_lstsq(design: DesignMatrix, constraint_total: float) -> RegressionResult:
    """Minimum-norm constrained fit (no intercept) for rank-deficient designs."""
    if design.cols == 1:
        return RegressionResult(coefficients=np.array([float(constraint_total)]))
    reduced, targets = _eliminate_last(design, constraint_total)
    root = np.sqrt(design.weights)
    free, *_ = np.linalg.lstsq(reduced * root[:, None], targets * root, rcond=None)
    return RegressionResult(coefficients=_recover_last(free, constraint_total))


@dataclass(frozen=True)
class _Standardized:
    x: np.ndarray  # standardized columns, constant columns zeroed
    y: np.ndarray  # centered targets
    share: np.ndarray  # normalized weights
    x_mean: np.ndarray
    x_scale: np.ndarray  # 0 for constant columns
    y_mean: float

    @property
    def active(self) -> np.ndarray:
        return self.x_scale > 0


def _standardize(design: DesignMatrix) -> _Standardized:
    share = design.weights / design.weights.sum()
    x_mean = share @ design.features
    centered = design.features - x_mean
    scale = np.sqrt(share @ centered**2)
    scale[scale < 1e-12] = 0.0
    safe = np.where(scale > 0, scale, 1.0)
    x = np.where(scale > 0, centered / safe, 0.0)
    y_mean = float(share @ design.targets)
    return _Standardized(x, design.targets - y_mean, share, x_mean, scale, y_mean)


def lasso_lambda_max(design: DesignMatrix) -> float:
    """Smallest λ (standardized scale) at which every lasso coefficient is zero."""
    std = _standardize(design)
    if not np.any(std.active):
        return 0.0
    return float(np.max(np.abs(std.x.T @ (std.share * std.y))))


def _soft_threshold(value: float, threshold: float) -> float:
    if value > threshold:
        return value - threshold
    if value < -threshold:
        return value + threshold
    return 0.0


def _objective(std: _Standardized, beta: np.ndarray, lam: float) -> float:
    residual = std.y - std.x @ beta
    return 0.5 * float(std.share @ residual**2) + lam * float(np.abs(beta).sum())


def solve_lasso(
    design: DesignMatrix,
    lam: float,
    max_iter: int = 10000,
    tol: float = 1e-8,
    warm_start: np.ndarray | None = None,
) -> RegressionResult:
    """
    Lasso with intercept by cyclic coordinate descent.

    Minimizes (1/(2Σw)) Σ w_i (y_i − β₀ − x_iᵀβ)² + λ‖β_std‖₁ where β_std are
    coefficients of the weighted-standardized columns. Constant columns get
    coefficient 0. Converged when the largest standardized coefficient change
    in a sweep is below tol; otherwise the result is flagged not converged.

    Args:
        design: Design, targets and weights.
        lam: Penalty on the standardized scale; 0 gives least squares.
        max_iter: Maximum coordinate sweeps.
        tol: Convergence threshold on standardized coefficient changes.
        warm_start: Standardized-scale starting coefficients.

    Raises:
        BoundsError: If lam is negative.
    """
    if lam < 0:
        raise BoundsError(f"lasso penalty must be non-negative, got {lam}")
    std = _standardize(design)
    n = design.cols
    weighted_x = std.x * std.share[:, None]
    gram = std.x.T @ weighted_x
    covariance = weighted_x.T @ std.y
    active = [j for j in range(n) if std.active[j]]

    beta = np.zeros(n) if warm_start is None else np.where(std.active, warm_start, 0.0)
    path: list[float] = []
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        largest = 0.0
        for j in active:
            # Gram diagonal is 1 for standardized columns.
            rho = covariance[j] - float(gram[j] @ beta) + beta[j]
            updated = _soft_threshold(rho, lam)
            largest = max(largest, abs(updated - beta[j]))
            beta[j] = updated
        path.append(_objective(std, beta, lam))
        if largest < tol:
            converged = True
            break

    if not converged:
        logger.warning(
            f"lasso did not converge in {max_iter} sweeps",
            extra={"lambda": lam, "max_iter": max_iter},
        )
    safe = np.where(std.active, std.x_scale, 1.0)
    coefficients = np.where(std.active, beta / safe, 0.0)
    intercept = std.y_mean - float(std.x_mean @ coefficients)
    return RegressionResult(
        coefficients=coefficients,
        intercept=intercept,
        converged=converged,
        iterations=iterations,
        objective_path=tuple(path),
        standardized=beta.copy(),
    )


def lasso_gradient(design: DesignMatrix, result: RegressionResult) -> tuple[np.ndarray, np.ndarray]:
    """
    Gradient of the smooth loss and the standardized coefficients of a lasso fit.

    At a solution with penalty λ, zero coefficients satisfy |g_j| ≤ λ and
    nonzero ones satisfy g_j = −sign(β_j)·λ.
    """
    std = _standardize(design)
    beta = np.where(std.active, result.coefficients * std.x_scale, 0.0)
    residual = std.y - std.x @ beta
    gradient = -(std.x.T @ (std.share * residual))
    return gradient, beta


def cross_validate_lasso(
    design: DesignMatrix,
    rng: np.random.Generator,
    folds: int = 5,
    grid_size: int = 20,
    ratio: float = 1e-3,
    max_iter: int = 10000,
    tol: float = 1e-8,
) -> tuple[float, np.ndarray, np.ndarray]:
    """
    Choose λ by k-fold cross-validation over a log-spaced grid.

    The grid runs from the full-data λ_max down to λ_max·ratio; each fold
    walks it with warm starts. Ties go to the larger λ.

    Returns:
        The chosen λ, the grid and the mean validation error per grid value.
    """
    top = lasso_lambda_max(design)
    if top == 0.0:
        grid = np.zeros(1)
        return 0.0, grid, np.zeros(1)
    grid = np.geomspace(top, top * ratio, grid_size)
    m = design.rows
    folds = max(2, min(folds, m))
    order = rng.permutation(m)
    errors = np.zeros(grid.size)
    for held_out in np.array_split(order, folds):
        train = np.setdiff1d(order, held_out)
        if train.size == 0 or held_out.size == 0:
            continue
        train_design = DesignMatrix(
            design.features[train], design.targets[train], design.weights[train]
        )
        test_x = design.features[held_out]
        test_y = design.targets[held_out]
        test_w = design.weights[held_out]
        warm: np.ndarray | None = None
        for i, lam in enumerate(grid):
            fit = solve_lasso(train_design, float(lam), max_iter=max_iter, tol=tol, warm_start=warm)
            warm = fit.standardized
            residual = test_y - fit.predict(test_x)
            errors[i] += float(test_w @ residual**2) / float(test_w.sum())
    errors /= folds
    best = int(np.argmin(errors))
    return float(grid[best]), grid, errors
