"""
Attribution estimators.

Each method maps (case, oracle, settings) to an AttributionVector. Beta,
Kernel SHAP and the lasso surrogate draw their whole sampling plan from the
seed before touching the oracle and reduce it in plan order; TMC scans its
permutations one coalition at a time. Either way the result does not depend
on how many evaluations ran in parallel.
"""

import math
import time
from collections.abc import Awaitable, Callable, Iterable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy import stats

from fastattribution.base import UtilityOracle
from fastattribution.coalition import CoalitionMask, shapley_weight
from fastattribution.exceptions import (
    BoundsError,
    BudgetExhaustedError,
    ConfigError,
    SingularSystemError,
)
from fastattribution.logging import get_logger
from fastattribution.models import AttributionMethod, AttributionVector, QueryCase
from fastattribution.regress import (
    DesignMatrix,
    cross_validate_lasso,
    solve_constrained_lstsq,
    solve_constrained_wls,
    solve_lasso,
)


logger = get_logger("estimators")

AUTO = "auto"
EXACT_MAX_PLAYERS = 20

# Beta-Shapley draws its plan in chunks of this many samples
_BETA_CHUNK = 8192


@dataclass
class EstimatorSettings:
    """
    Settings shared by the budgeted estimators.

    Attributes:
        budget: Distinct coalitions a run may consume, v(∅) and v(D) included.
        seed: Seed of the sampling plan.
        tmc_truncation_tol: TMC stops a permutation once |v(P) − v(D)| falls
            below this fraction of |v(D) − v(∅)|.
        beta_alpha: Beta-Shapley α.
        beta_beta: Beta-Shapley β.
        lasso_lambda: Lasso penalty on the standardized scale, or ``"auto"``
            for cross-validation.
        surrogate_mask_prob: Probability of keeping each document in a
            surrogate mask.
        max_samples: Sampled marginals per player for TMC and Beta-Shapley.
        lasso_max_iter: Coordinate-descent sweep limit.
        lasso_tol: Coordinate-descent convergence threshold.
        cv_folds: Folds used when lasso_lambda is ``"auto"``.
        cv_grid_size: Penalties tried when lasso_lambda is ``"auto"``.
        exact_max_players: Largest case exact Shapley will enumerate.

    Example:
        ```python
        from fastattribution import EstimatorSettings

        settings = EstimatorSettings(budget=64, seed=7, beta_alpha=1.0, beta_beta=1.0)
        ```
    """

    budget: int = 100
    seed: int = 0
    tmc_truncation_tol: float = 0.01
    beta_alpha: float = 0.5
    beta_beta: float = 0.5
    lasso_lambda: float | str = AUTO
    surrogate_mask_prob: float = 0.5
    max_samples: int = 20000
    lasso_max_iter: int = 10000
    lasso_tol: float = 1e-8
    cv_folds: int = 5
    cv_grid_size: int = 20
    exact_max_players: int = EXACT_MAX_PLAYERS

    def __post_init__(self) -> None:
        if self.budget < 2:
            raise ConfigError(f"budget must be at least 2, got {self.budget}")
        if self.tmc_truncation_tol < 0:
            raise ConfigError("tmc_truncation_tol must be non-negative")
        _check_beta(self.beta_alpha, self.beta_beta)
        if isinstance(self.lasso_lambda, str):
            if self.lasso_lambda != AUTO:
                raise ConfigError(f"lasso_lambda must be a number or 'auto', got {self.lasso_lambda!r}")
        elif self.lasso_lambda < 0:
            raise ConfigError("lasso_lambda must be non-negative")
        if not 0 < self.surrogate_mask_prob < 1:
            raise ConfigError("surrogate_mask_prob must lie in (0, 1)")
        if self.max_samples < 1:
            raise ConfigError("max_samples must be positive")
        if self.cv_folds < 2 or self.cv_grid_size < 1:
            raise ConfigError("cv_folds must be at least 2 and cv_grid_size at least 1")


def _check_beta(alpha: float, beta: float) -> None:
    if not (alpha > 0 and beta > 0 and math.isfinite(alpha) and math.isfinite(beta)):
        raise ConfigError(f"Beta parameters must be positive and finite, got ({alpha}, {beta})")


def _require_budget(method: AttributionMethod, budget: int, needed: int) -> None:
    if budget < needed:
        raise BoundsError(f"{method.value} needs a budget of at least {needed}, got {budget}")


class CoalitionLedger:
    """
    Distinct coalitions consumed by one estimator run, with their values.

    Every coalition counts once against the budget whether or not the
    oracle's cache already held it, so ``consumed`` is reproducible.
    """

    def __init__(self, oracle: UtilityOracle, case: QueryCase, budget: int | None = None) -> None:
        self.oracle = oracle
        self.case = case
        self.budget = budget
        self.values: dict[int, float] = {}

    def __contains__(self, bits: object) -> bool:
        return bits in self.values

    @property
    def consumed(self) -> int:
        return len(self.values)

    @property
    def remaining(self) -> float:
        return math.inf if self.budget is None else self.budget - len(self.values)

    async def fetch(self, bits: Iterable[int]) -> list[float]:
        """
        Values for the given masks, evaluating unseen ones concurrently.

        Raises:
            BudgetExhaustedError: If the unseen masks exceed the remaining budget.
        """
        order = [int(b) for b in bits]
        unseen = [b for b in dict.fromkeys(order) if b not in self.values]
        if unseen:
            if len(unseen) > self.remaining:
                raise BudgetExhaustedError(
                    f"{len(unseen)} new coalitions requested with {self.remaining} of {self.budget} left"
                )
            n = self.case.n
            records = await self.oracle.evaluate_many(self.case, [CoalitionMask(b, n) for b in unseen])
            for b, record in zip(unseen, records, strict=True):
                self.values[b] = record.value
        return [self.values[b] for b in order]

    async def value(self, bits: int) -> float:
        known = self.values.get(bits)
        if known is not None:
            return known
        return (await self.fetch([bits]))[0]


def _vector(
    method: AttributionMethod,
    case: QueryCase,
    scores: Sequence[float],
    ledger: CoalitionLedger,
    budget: int,
    seed: int,
    low_confidence: bool = False,
    **details,
) -> AttributionVector:
    return AttributionVector(
        method=method,
        scores=tuple(float(s) for s in scores),
        budget=budget,
        oracle_calls=ledger.consumed,
        seed=seed,
        case_id=case.case_id,
        low_confidence=low_confidence,
        details=details,
    )


def _popcounts(n: int) -> np.ndarray:
    index = np.arange(1 << n, dtype=np.int64)
    sizes = np.zeros(1 << n, dtype=np.int64)
    for j in range(n):
        sizes += (index >> j) & 1
    return sizes


def shapley_from_values(values: np.ndarray, n: int) -> np.ndarray:
    """Exact Shapley values from v indexed by mask integer (length 2^n)."""
    index = np.arange(1 << n, dtype=np.int64)
    sizes = _popcounts(n)
    weights = np.array([shapley_weight(n, s) for s in range(n)])
    scores = np.empty(n)
    for j in range(n):
        without = index[((index >> j) & 1) == 0]
        marginals = values[without | (1 << j)] - values[without]
        scores[j] = float(weights[sizes[without]] @ marginals)
    return scores


def _members(bits: np.ndarray, n: int) -> np.ndarray:
    return ((np.asarray(bits, dtype=np.int64)[:, None] >> np.arange(n)) & 1).astype(float)


def _random_subsets(rng: np.random.Generator, n: int, sizes: np.ndarray, exclude: np.ndarray | None = None) -> np.ndarray:
    # Uniform subsets of the given sizes: keep the `size` smallest random keys per row.
    keys = rng.random((sizes.size, n))
    if exclude is not None:
        keys[np.arange(sizes.size), exclude] = np.inf
    ranks = keys.argsort(axis=1).argsort(axis=1)
    members = ranks < sizes[:, None]
    return (members.astype(np.int64) << np.arange(n, dtype=np.int64)).sum(axis=1)


async def exact_shapley(
    case: QueryCase,
    oracle: UtilityOracle,
    max_players: int = EXACT_MAX_PLAYERS,
) -> AttributionVector:
    """
    Exact Shapley values by enumerating all 2^n coalitions.

    Raises:
        BoundsError: If the case has more than max_players documents.
    """
    n = case.n
    if n > max_players:
        raise BoundsError(
            f"exact Shapley needs 2^{n} utilities; above {max_players} documents "
            "use tmc, beta, kernel_shap or context_cite instead"
        )
    ledger = CoalitionLedger(oracle, case)
    values = np.asarray(await ledger.fetch(range(1 << n)))
    scores = shapley_from_values(values, n)
    return _vector(
        AttributionMethod.SHAPLEY,
        case,
        scores,
        ledger,
        budget=1 << n,
        seed=0,
        v_empty=float(values[0]),
        v_full=float(values[-1]),
    )


async def loo(case: QueryCase, oracle: UtilityOracle) -> AttributionVector:
    """Leave-one-out: φ_j = v(D) − v(D \\ {j})."""
    n = case.n
    full = (1 << n) - 1
    ledger = CoalitionLedger(oracle, case)
    values = await ledger.fetch([full] + [full & ~(1 << j) for j in range(n)])
    scores = [values[0] - values[1 + j] for j in range(n)]
    return _vector(AttributionMethod.LOO, case, scores, ledger, budget=n + 1, seed=0)


def _mean_and_error(sums: np.ndarray, squares: np.ndarray, counts: np.ndarray):
    safe = np.maximum(counts, 1)
    means = np.where(counts > 0, sums / safe, 0.0)
    variance = np.where(counts > 1, (squares - counts * means**2) / np.maximum(counts - 1, 1), 0.0)
    errors = np.sqrt(np.maximum(variance, 0.0) / safe)
    return means, errors


async def tmc_shapley(
    case: QueryCase,
    oracle: UtilityOracle,
    settings: EstimatorSettings,
) -> AttributionVector:
    """
    Truncated Monte Carlo Shapley over sampled permutations.

    Each permutation is scanned in order; once the running prefix value is
    within ``tmc_truncation_tol·|v(D) − v(∅)|`` of v(D), the remaining players
    receive a zero marginal. Sampling stops after ``max_samples`` permutations
    (one marginal per player each) or when the next coalition would exceed
    the budget; a run that cannot finish one permutation is flagged low
    confidence.
    """
    n = case.n
    rng = np.random.default_rng(settings.seed)
    ledger = CoalitionLedger(oracle, case, settings.budget)
    full = (1 << n) - 1
    v_empty, v_full = await ledger.fetch([0, full])
    threshold = settings.tmc_truncation_tol * abs(v_full - v_empty)

    sums = np.zeros(n)
    squares = np.zeros(n)
    counts = np.zeros(n, dtype=np.int64)
    permutations = settings.max_samples
    completed = truncated = 0
    exhausted = False
    for _ in range(permutations):
        order = rng.permutation(n)
        prefix, previous = 0, v_empty
        for position, player in enumerate(order):
            if abs(previous - v_full) < threshold:
                counts[order[position:]] += 1
                truncated += 1
                break
            bits = prefix | (1 << int(player))
            if bits not in ledger and ledger.remaining < 1:
                exhausted = True
                break
            current = ledger.values.get(bits)
            if current is None:
                current = await ledger.value(bits)
            marginal = current - previous
            sums[player] += marginal
            squares[player] += marginal * marginal
            counts[player] += 1
            prefix, previous = bits, current
        if exhausted:
            break
        completed += 1

    scores, errors = _mean_and_error(sums, squares, counts)
    low_confidence = completed == 0 or bool(np.any(counts == 0))
    if low_confidence:
        logger.warning(
            f"tmc budget {settings.budget} too small for a full permutation on case {case.case_id}",
            extra={"case_id": case.case_id, "budget": settings.budget, "n": n},
        )
    return _vector(
        AttributionMethod.TMC,
        case,
        scores,
        ledger,
        budget=settings.budget,
        seed=settings.seed,
        low_confidence=low_confidence,
        permutations=completed,
        truncated=truncated,
        samples=int(counts.sum()),
        std_error=errors.tolist(),
    )


def beta_size_pmf(n: int, alpha: float, beta: float) -> np.ndarray:
    """Probability of each coalition size 0..n−1: Beta-Binomial(n−1, α, β)."""
    _check_beta(alpha, beta)
    return stats.betabinom.pmf(np.arange(n), n - 1, alpha, beta)


def sample_beta_sizes(
    rng: np.random.Generator, n: int, alpha: float, beta: float, count: int
) -> np.ndarray:
    """Coalition sizes drawn from the discretized Beta(α, β) on {0..n−1}."""
    _check_beta(alpha, beta)
    if n == 1:
        return np.zeros(count, dtype=np.int64)
    return np.asarray(stats.betabinom.rvs(n - 1, alpha, beta, size=count, random_state=rng), dtype=np.int64)


async def beta_shapley(
    case: QueryCase,
    oracle: UtilityOracle,
    settings: EstimatorSettings,
) -> AttributionVector:
    """
    Beta-Shapley semivalue by size-stratified sampling.

    Sample i belongs to player i mod n; its coalition size is drawn from the
    discretized Beta(α, β) and the coalition is uniform among subsets of
    that size excluding the player. The estimate is the mean marginal per
    player, which is the Beta-weighted semivalue because sizes are sampled
    from the weights themselves. With α = β = 1 this is the Shapley value.

    Up to ``max_samples`` samples are drawn per player; drawing stops at the
    first sample whose coalitions would exceed the budget.

    Raises:
        ConfigError: If α or β is not positive.
    """
    _check_beta(settings.beta_alpha, settings.beta_beta)
    n = case.n
    rng = np.random.default_rng(settings.seed)
    total = settings.max_samples * n

    seen: set[int] = set()
    plan: list[int] = []
    admitted = drawn = 0
    full_budget = False
    while drawn < total and not full_budget:
        size = min(_BETA_CHUNK, total - drawn)
        players = np.arange(drawn, drawn + size) % n
        sizes = sample_beta_sizes(rng, n, settings.beta_alpha, settings.beta_beta, size)
        without = _random_subsets(rng, n, sizes, exclude=players)
        with_player = without | (np.int64(1) << players)
        for pair in zip(without.tolist(), with_player.tolist(), strict=True):
            new = (pair[0] not in seen) + (pair[1] not in seen)
            if new and len(seen) + new > settings.budget:
                full_budget = True
                break
            seen.update(pair)
            plan.extend(pair)
            admitted += 1
        drawn += size

    ledger = CoalitionLedger(oracle, case, settings.budget)
    values = await ledger.fetch(plan)
    marginals = np.asarray(values[1::2]) - np.asarray(values[0::2])
    owners = np.arange(admitted) % n
    counts = np.bincount(owners, minlength=n)
    sums = np.bincount(owners, weights=marginals, minlength=n)
    squares = np.bincount(owners, weights=marginals**2, minlength=n)
    scores, errors = _mean_and_error(sums, squares, counts)
    return _vector(
        AttributionMethod.BETA,
        case,
        scores,
        ledger,
        budget=settings.budget,
        seed=settings.seed,
        low_confidence=bool(np.any(counts == 0)),
        samples=admitted,
        alpha=settings.beta_alpha,
        beta=settings.beta_beta,
        std_error=errors.tolist(),
    )


def kernel_weight(n: int, s: int) -> float:
    """SHAP kernel weight (n−1) / (C(n,s)·s·(n−s)) of one coalition of size s."""
    if not 0 < s < n:
        raise BoundsError(f"kernel weight defined for sizes 1..{n - 1}, got {s}")
    return (n - 1) / (math.comb(n, s) * s * (n - s))


def sample_kernel_coalitions(
    rng: np.random.Generator,
    n: int,
    count: int,
    max_rounds: int = 200,
) -> list[int]:
    """
    Distinct proper coalitions, sizes drawn in proportion to kernel mass.

    Size s has mass (n−1)/(s(n−s)); the coalition is uniform within its size.
    Should rejection sampling stall, the remaining slots are filled with
    unseen coalitions in ascending order.
    """
    proper = (1 << n) - 2
    if count > proper:
        raise BoundsError(f"only {proper} proper coalitions exist for {n} players")
    size_values = np.arange(1, n)
    mass = (n - 1) / (size_values * (n - size_values))
    probabilities = mass / mass.sum()
    chosen: list[int] = []
    seen: set[int] = set()
    for _ in range(max_rounds):
        if len(chosen) >= count:
            break
        batch = max(64, 2 * (count - len(chosen)))
        sizes = rng.choice(size_values, size=batch, p=probabilities)
        for bits in _random_subsets(rng, n, sizes).tolist():
            if bits not in seen:
                seen.add(bits)
                chosen.append(bits)
                if len(chosen) == count:
                    break
    if len(chosen) < count:
        for bits in range(1, proper + 1):
            if bits not in seen:
                seen.add(bits)
                chosen.append(bits)
                if len(chosen) == count:
                    break
    return chosen


def fit_kernel_surrogate(
    n: int,
    coalitions: Sequence[int],
    values: Sequence[float],
    v_empty: float,
    v_full: float,
) -> tuple[np.ndarray, bool]:
    """
    Constrained kernel-weighted regression of v(S) − v(∅) on membership.

    Every row carries its own kernel weight, sampled or enumerated. The
    design holds distinct coalitions, so how often a size was drawn is not
    recorded in it; the weight restores the kernel's share per coalition
    and is what makes the full design reproduce exact Shapley values.

    Returns:
        The coefficients (summing to v(D) − v(∅)) and whether the design was
        rank deficient and solved in the minimum-norm sense.
    """
    bits = np.asarray(coalitions, dtype=np.int64)
    features = _members(bits, n)
    sizes = features.sum(axis=1).astype(int)
    weights = np.array([kernel_weight(n, int(s)) for s in sizes])
    design = DesignMatrix(features, np.asarray(values, dtype=float) - v_empty, weights)
    total = v_full - v_empty
    try:
        return solve_constrained_wls(design, total).coefficients, False
    except SingularSystemError as exc:
        logger.warning(
            f"kernel design rank deficient in columns {list(exc.columns)}; using minimum-norm fit",
            extra={"columns": list(exc.columns), "rows": design.rows},
        )
        return solve_constrained_lstsq(design, total).coefficients, True


async def kernel_shap(
    case: QueryCase,
    oracle: UtilityOracle,
    settings: EstimatorSettings,
) -> AttributionVector:
    """
    Kernel SHAP with the efficiency constraint enforced exactly.

    Evaluates v(∅) and v(D), then budget − 2 distinct proper coalitions
    (every proper coalition once the budget covers them all), and fits the
    kernel-weighted regression with Σφ = v(D) − v(∅). Duplicate draws never
    consume budget; a design still rank deficient once the budget is spent
    is solved in the minimum-norm sense and flagged low confidence.

    Raises:
        BoundsError: If budget < n + 2.
    """
    n = case.n
    _require_budget(AttributionMethod.KERNEL_SHAP, settings.budget, n + 2)
    rng = np.random.default_rng(settings.seed)
    ledger = CoalitionLedger(oracle, case, settings.budget)
    full = (1 << n) - 1
    v_empty, v_full = await ledger.fetch([0, full])
    if n == 1:
        return _vector(
            AttributionMethod.KERNEL_SHAP, case, [v_full - v_empty], ledger,
            budget=settings.budget, seed=settings.seed, design_rows=0,
        )

    proper = full - 1
    target = settings.budget - 2
    plan = list(range(1, full)) if target >= proper else sample_kernel_coalitions(rng, n, target)
    values = await ledger.fetch(plan)
    scores, min_norm = fit_kernel_surrogate(n, plan, values, v_empty, v_full)
    return _vector(
        AttributionMethod.KERNEL_SHAP,
        case,
        scores,
        ledger,
        budget=settings.budget,
        seed=settings.seed,
        low_confidence=min_norm,
        design_rows=len(plan),
        full_enumeration=target >= proper,
        min_norm=min_norm,
    )


def draw_masks(rng: np.random.Generator, rows: int, n: int, keep_prob: float) -> np.ndarray:
    """rows × n Bernoulli(keep_prob) membership matrix."""
    return (rng.random((rows, n)) < keep_prob).astype(np.int64)


def _degenerate(masks: np.ndarray) -> bool:
    return bool(np.all(masks == masks[0]))


async def context_cite(
    case: QueryCase,
    oracle: UtilityOracle,
    settings: EstimatorSettings,
) -> AttributionVector:
    """
    Sparse linear surrogate fit to utilities of random document masks.

    Draws ``budget`` masks keeping each document with probability
    ``surrogate_mask_prob`` (repeated masks cost one evaluation), then fits a
    lasso with intercept from membership to v(S). The penalty is fixed or
    chosen by cross-validation. A plan whose masks are all identical is
    redrawn once from a perturbed stream before any evaluation.

    Raises:
        BoundsError: If budget < n + 2.
    """
    n = case.n
    _require_budget(AttributionMethod.CONTEXT_CITE, settings.budget, n + 2)
    rng = np.random.default_rng(settings.seed)
    masks = draw_masks(rng, settings.budget, n, settings.surrogate_mask_prob)
    resampled = False
    low_confidence = False
    if _degenerate(masks):
        resampled = True
        rng = np.random.default_rng([settings.seed, 1])
        masks = draw_masks(rng, settings.budget, n, settings.surrogate_mask_prob)
        if _degenerate(masks):
            low_confidence = True
            logger.warning(
                f"degenerate surrogate masks for case {case.case_id} after resampling",
                extra={"case_id": case.case_id, "seed": settings.seed},
            )

    bits = (masks << np.arange(n, dtype=np.int64)).sum(axis=1)
    ledger = CoalitionLedger(oracle, case, settings.budget)
    values = await ledger.fetch(bits.tolist())
    design = DesignMatrix(masks.astype(float), np.asarray(values))
    if settings.lasso_lambda == AUTO:
        lam, _, _ = cross_validate_lasso(
            design,
            rng,
            folds=settings.cv_folds,
            grid_size=settings.cv_grid_size,
            max_iter=settings.lasso_max_iter,
            tol=settings.lasso_tol,
        )
    else:
        lam = float(settings.lasso_lambda)
    fit = solve_lasso(design, lam, max_iter=settings.lasso_max_iter, tol=settings.lasso_tol)
    return _vector(
        AttributionMethod.CONTEXT_CITE,
        case,
        fit.coefficients,
        ledger,
        budget=settings.budget,
        seed=settings.seed,
        low_confidence=low_confidence or fit.not_converged,
        **{"lambda": lam},
        intercept=fit.intercept,
        converged=fit.converged,
        resampled=resampled,
        rows=settings.budget,
    )


Estimator = Callable[[QueryCase, UtilityOracle, EstimatorSettings], Awaitable[AttributionVector]]

ESTIMATORS: dict[AttributionMethod, Estimator] = {
    AttributionMethod.SHAPLEY: lambda case, oracle, s: exact_shapley(case, oracle, s.exact_max_players),
    AttributionMethod.LOO: lambda case, oracle, s: loo(case, oracle),
    AttributionMethod.TMC: tmc_shapley,
    AttributionMethod.BETA: beta_shapley,
    AttributionMethod.KERNEL_SHAP: kernel_shap,
    AttributionMethod.CONTEXT_CITE: context_cite,
}

RANDOMIZED_METHODS = frozenset(
    {
        AttributionMethod.TMC,
        AttributionMethod.BETA,
        AttributionMethod.KERNEL_SHAP,
        AttributionMethod.CONTEXT_CITE,
    }
)


def parse_method(name: str | AttributionMethod) -> AttributionMethod:
    try:
        return AttributionMethod(name)
    except ValueError:
        known = ", ".join(m.value for m in AttributionMethod)
        raise ConfigError(f"unknown attribution method {name!r} (known: {known})") from None


async def run_method(
    method_name: str | AttributionMethod,
    case: QueryCase,
    oracle: UtilityOracle,
    settings: EstimatorSettings | None = None,
) -> AttributionVector:
    """
    Run one attribution method by name.

    Raises:
        ConfigError: If the method is unknown.

    Example:
        ```python
        vector = await run_method("kernel_shap", case, oracle, EstimatorSettings(budget=64, seed=1))
        vector.ranking()
        ```
    """
    method = parse_method(method_name)
    settings = settings or EstimatorSettings()
    context = {
        "case_id": case.case_id,
        "method": method.value,
        "budget": settings.budget,
        "seed": settings.seed,
    }
    logger.debug(f"→ {method.value} case={case.case_id} budget={settings.budget}", extra=context)
    start_time = time.perf_counter()
    vector = await ESTIMATORS[method](case, oracle, settings)
    elapsed_ms = round((time.perf_counter() - start_time) * 1000, 2)
    logger.debug(
        f"← ✓ {method.value} case={case.case_id} calls={vector.oracle_calls} {elapsed_ms:.2f}ms",
        extra={**context, "oracle_calls": vector.oracle_calls, "elapsed_ms": elapsed_ms},
    )
    return vector
