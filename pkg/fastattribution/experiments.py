"""
Evaluation protocols.

Experiment 1 compares each method with exact Shapley values, experiment 2
compares each method's top-k with the exhaustive impact set, and experiment 3
measures how scenario pairs (A, B) are scored in both document orders.

Cases run concurrently; rows are folded in case-id order so reports are
identical whatever the scheduling.
"""

import asyncio
import csv
import io
import json
import math
from collections import defaultdict
from collections.abc import Awaitable, Callable, Iterable, Sequence
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, NamedTuple, TypeVar

import numpy as np
from tqdm.auto import tqdm

from fastattribution.base import UtilityOracle
from fastattribution.coalition import CoalitionMask, enumerate_k_subsets
from fastattribution.estimators import (
    EXACT_MAX_PLAYERS,
    RANDOMIZED_METHODS,
    CoalitionLedger,
    EstimatorSettings,
    parse_method,
    run_method,
)
from fastattribution.exceptions import AttributionError, BoundsError, UndefinedCorrelationError
from fastattribution.logging import get_logger
from fastattribution.metrics import (
    kendall_tau,
    label_mass,
    min_max_normalize,
    pearson,
    precision_at_k,
    set_precision,
    spearman,
)
from fastattribution.models import AttributionMethod, AttributionVector, DocumentLabel, QueryCase
from fastattribution.storage import atomic_write_text


logger = get_logger("experiments")

DEFAULT_BUDGETS = (32, 64, 100)
SHAPLEY_KS = (1, 3, 5)
IMPACT_KS = (2, 3, 4, 5)
CSV_HEADER = ("case_id", "scenario", "method", "budget", "seed", "metric", "k", "value")

T = TypeVar("T")


@dataclass(frozen=True)
class ImpactSet:
    """The k documents whose joint removal lowers v(D) the most."""

    case_id: str
    k: int
    members: CoalitionMask
    drop: float


async def exhaustive_impact_set(
    case: QueryCase,
    oracle: UtilityOracle,
    k: int,
    max_players: int = EXACT_MAX_PLAYERS,
) -> ImpactSet:
    """
    argmax over |S| = k of v(D) − v(D \\ S), by full enumeration.

    Ties go to the smallest mask integer.

    Raises:
        BoundsError: If the case exceeds max_players or k is outside [0, n].
    """
    n = case.n
    if n > max_players:
        raise BoundsError(f"exhaustive impact search is capped at {max_players} documents, case has {n}")
    subsets = list(enumerate_k_subsets(n, k))
    full = (1 << n) - 1
    ledger = CoalitionLedger(oracle, case)
    values = await ledger.fetch([full] + [full & ~s.bits for s in subsets])
    v_full = values[0]
    best, best_drop = subsets[0], v_full - values[1]
    for subset, remainder in zip(subsets[1:], values[2:], strict=True):
        drop = v_full - remainder
        if drop > best_drop:
            best, best_drop = subset, drop
    return ImpactSet(case.case_id, k, best, best_drop)


class ReportRow(NamedTuple):
    """One long-format report line."""

    case_id: str
    scenario: str
    method: str
    budget: int
    seed: int
    metric: str
    k: int | None
    value: float


@dataclass
class MetricReport:
    """
    Agreement of one method run with its references.

    Attributes:
        precision_at: Top-k overlap with exact Shapley, by k.
        impact_precision_at: Top-k overlap with the exhaustive impact set, by k.
        label_mass: Share of absolute attribution per document label.
    """

    case_id: str
    scenario: str
    method: str
    budget: int
    seed: int
    spearman: float | None = None
    pearson: float | None = None
    kendall_tau: float | None = None
    precision_at: dict[int, float] = field(default_factory=dict)
    impact_precision_at: dict[int, float] = field(default_factory=dict)
    label_mass: dict[str, float] = field(default_factory=dict)

    def rows(self) -> list[ReportRow]:
        base = (self.case_id, self.scenario, self.method, self.budget, self.seed)
        rows = [
            ReportRow(*base, metric, None, value)
            for metric, value in (
                ("spearman", self.spearman),
                ("pearson", self.pearson),
                ("kendall_tau", self.kendall_tau),
            )
            if value is not None
        ]
        rows += [ReportRow(*base, "precision_at_k", k, v) for k, v in sorted(self.precision_at.items())]
        rows += [
            ReportRow(*base, "impact_precision_at_k", k, v)
            for k, v in sorted(self.impact_precision_at.items())
        ]
        rows += [
            ReportRow(self.case_id, f"label:{label}", self.method, self.budget, self.seed, "label_mass", None, v)
            for label, v in self.label_mass.items()
        ]
        return rows


def _correlation(metric: Callable[[Any, Any], float], a, b) -> float:
    if len(a) < 2:
        return math.nan
    try:
        return metric(a, b)
    except UndefinedCorrelationError:
        return math.nan


def _summarize(rows: Iterable[ReportRow]) -> list[dict[str, Any]]:
    groups: dict[tuple, list[float]] = defaultdict(list)
    undefined: dict[tuple, int] = defaultdict(int)
    for row in rows:
        label = row.scenario[len("label:"):] if row.scenario.startswith("label:") else None
        key = (row.method, row.budget, row.metric, row.k, label)
        if math.isnan(row.value):
            undefined[key] += 1
            groups.setdefault(key, [])
        else:
            groups[key].append(row.value)
    summary = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2], k[3] or 0, k[4] or "")):
        values = np.asarray(groups[key])
        count = int(values.size)
        entry: dict[str, Any] = {
            "method": key[0],
            "budget": key[1],
            "metric": key[2],
            "k": key[3],
            "mean": float(values.mean()) if count else None,
            "std_error": float(values.std(ddof=1) / math.sqrt(count)) if count > 1 else 0.0,
            "count": count,
            "undefined": undefined.get(key, 0),
        }
        if key[4] is not None:
            entry["label"] = key[4]
        summary.append(entry)
    return summary


def _format_value(value: float) -> str:
    return "nan" if math.isnan(value) else repr(float(value))


@dataclass
class ExperimentReport:
    """
    Rows and bookkeeping of one experiment run.

    Attributes:
        experiment: 1, 2 or 3.
        rows: Long-format rows in case-id order.
        cases: Cases submitted.
        failed: Case id → error for cases whose evaluation raised.
        skipped: Case id → reason for cases incompatible with the experiment.
        degenerate: (case id, method) pairs excluded from experiment-3 means.
        metadata: Methods, budgets, seeds and settings of the run.
        tables: Extra summary tables (experiment 3 A/B means).
    """

    experiment: int
    rows: list[ReportRow] = field(default_factory=list)
    cases: int = 0
    failed: dict[str, str] = field(default_factory=dict)
    skipped: dict[str, str] = field(default_factory=dict)
    degenerate: list[tuple[str, str]] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)
    tables: dict[str, Any] = field(default_factory=dict)

    def summary(self) -> dict[str, Any]:
        return {
            "experiment": self.experiment,
            "cases": self.cases,
            "evaluated": self.cases - len(self.failed) - len(self.skipped),
            "failed": dict(sorted(self.failed.items())),
            "skipped": dict(sorted(self.skipped.items())),
            "degenerate": [list(item) for item in self.degenerate],
            "metadata": self.metadata,
            "means": _summarize(self.rows),
            **self.tables,
        }

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in self.rows:
            writer.writerow(
                [
                    row.case_id,
                    row.scenario,
                    row.method,
                    row.budget,
                    row.seed,
                    row.metric,
                    "" if row.k is None else row.k,
                    _format_value(row.value),
                ]
            )
        return buffer.getvalue()

    def write(self, out_dir: str | Path, name: str | None = None) -> tuple[Path, Path]:
        """Write ``<name>.csv`` and ``<name>.summary.json`` atomically."""
        stem = name or f"experiment{self.experiment}"
        directory = Path(out_dir)
        csv_path = atomic_write_text(directory / f"{stem}.csv", self.to_csv())
        json_path = atomic_write_text(
            directory / f"{stem}.summary.json",
            json.dumps(self.summary(), indent=2, sort_keys=True) + "\n",
        )
        return csv_path, json_path


async def _for_each_case(
    cases: Sequence[QueryCase],
    worker: Callable[[QueryCase], Awaitable[T]],
    report: ExperimentReport,
    max_concurrent_cases: int,
    progress: bool,
) -> list[tuple[QueryCase, T]]:
    slots = asyncio.Semaphore(max_concurrent_cases)
    with tqdm(total=len(cases), desc=f"experiment {report.experiment}", unit="case", disable=not progress) as bar:

        async def guarded(case: QueryCase) -> tuple[QueryCase, T | None, AttributionError | None]:
            async with slots:
                try:
                    return case, await worker(case), None
                except AttributionError as exc:
                    logger.warning(
                        f"case {case.case_id} failed: {exc}",
                        extra={"case_id": case.case_id, "error": type(exc).__name__},
                    )
                    return case, None, exc
                finally:
                    bar.update(1)

        outcomes = await asyncio.gather(*(guarded(case) for case in cases))

    done: list[tuple[QueryCase, T]] = []
    for case, result, error in sorted(outcomes, key=lambda item: item[0].case_id):
        if error is not None:
            report.failed[case.case_id] = f"{type(error).__name__}: {error}"
        else:
            done.append((case, result))  # type: ignore[arg-type]
    return done


async def _method_runs(
    method: AttributionMethod,
    case: QueryCase,
    oracle: UtilityOracle,
    base: EstimatorSettings,
    budgets: Sequence[int],
    seeds: Sequence[int],
    reference: AttributionVector | None = None,
) -> list[tuple[int, int, AttributionVector]]:
    """(budget, seed, vector) for every grid point; deterministic methods run once, seed 0."""
    if method not in RANDOMIZED_METHODS:
        if method is AttributionMethod.SHAPLEY and reference is not None:
            vector = reference
        else:
            vector = await run_method(method, case, oracle, base)
        return [(budget, 0, vector) for budget in budgets]
    runs = []
    for budget in budgets:
        for seed in seeds:
            vector = await run_method(method, case, oracle, replace(base, budget=budget, seed=seed))
            runs.append((budget, seed, vector))
    return runs


def _metadata(methods, budgets, seeds, settings: EstimatorSettings, **extra) -> dict[str, Any]:
    return {
        "methods": [m.value for m in methods],
        "budgets": list(budgets),
        "seeds": list(seeds),
        "settings": asdict(settings),
        **extra,
    }


async def experiment1(
    cases: Sequence[QueryCase],
    oracle: UtilityOracle,
    methods: Sequence[str | AttributionMethod],
    budgets: Sequence[int] = DEFAULT_BUDGETS,
    seeds: Sequence[int] = (0,),
    settings: EstimatorSettings | None = None,
    ks: Sequence[int] = SHAPLEY_KS,
    max_concurrent_cases: int = 8,
    progress: bool = False,
) -> ExperimentReport:
    """
    Agreement of every method with exact Shapley values.

    Per case, exact Shapley runs once and every (method, budget, seed) once;
    rows carry Spearman, Pearson, Kendall tau-b, precision@k against the
    Shapley top-k and, for labelled cases, the attribution share per label.
    A case whose evaluation raises is recorded as failed and left out.
    """
    parsed = [parse_method(m) for m in methods]
    base = settings or EstimatorSettings()
    report = ExperimentReport(1, cases=len(cases), metadata=_metadata(parsed, budgets, seeds, base, ks=list(ks)))

    async def evaluate(case: QueryCase) -> list[ReportRow]:
        reference = await run_method(AttributionMethod.SHAPLEY, case, oracle, base)
        labelled = any(label is not DocumentLabel.UNLABELED for label in case.labels())
        rows: list[ReportRow] = []
        for method in parsed:
            for budget, seed, vector in await _method_runs(method, case, oracle, base, budgets, seeds, reference):
                metrics = MetricReport(
                    case.case_id,
                    case.scenario_tag.value,
                    method.value,
                    budget,
                    seed,
                    spearman=_correlation(spearman, vector.scores, reference.scores),
                    pearson=_correlation(pearson, vector.scores, reference.scores),
                    kendall_tau=_correlation(kendall_tau, vector.scores, reference.scores),
                    precision_at={
                        k: precision_at_k(vector.scores, reference.scores, k) for k in ks if k <= case.n
                    },
                )
                if labelled:
                    metrics.label_mass = {
                        label.value: mass for label, mass in label_mass(vector.scores, case.labels()).items()
                    }
                rows.extend(metrics.rows())
        return rows

    for _, rows in await _for_each_case(cases, evaluate, report, max_concurrent_cases, progress):
        report.rows.extend(rows)
    return report


async def experiment2(
    cases: Sequence[QueryCase],
    oracle: UtilityOracle,
    methods: Sequence[str | AttributionMethod],
    budgets: Sequence[int] = DEFAULT_BUDGETS,
    ks: Sequence[int] = IMPACT_KS,
    seeds: Sequence[int] = (0,),
    settings: EstimatorSettings | None = None,
    max_concurrent_cases: int = 8,
    progress: bool = False,
) -> ExperimentReport:
    """
    Precision@k of each method's top-k against the exhaustive impact set.

    Impact sets are computed once per (case, k); rows with method
    ``exhaustive`` record their utility drop.
    """
    parsed = [parse_method(m) for m in methods]
    base = settings or EstimatorSettings()
    report = ExperimentReport(2, cases=len(cases), metadata=_metadata(parsed, budgets, seeds, base, ks=list(ks)))

    async def evaluate(case: QueryCase) -> list[ReportRow]:
        scenario = case.scenario_tag.value
        impact = {
            k: await exhaustive_impact_set(case, oracle, k, base.exact_max_players)
            for k in ks
            if 1 <= k <= case.n
        }
        rows = [
            ReportRow(case.case_id, scenario, "exhaustive", 0, 0, "impact_drop", k, item.drop)
            for k, item in impact.items()
        ]
        for method in parsed:
            for budget, seed, vector in await _method_runs(method, case, oracle, base, budgets, seeds):
                metrics = MetricReport(
                    case.case_id,
                    scenario,
                    method.value,
                    budget,
                    seed,
                    impact_precision_at={
                        k: set_precision(vector.scores, item.members.indices(), k)
                        for k, item in impact.items()
                    },
                )
                rows.extend(metrics.rows())
        return rows

    for _, rows in await _for_each_case(cases, evaluate, report, max_concurrent_cases, progress):
        report.rows.extend(rows)
    return report


def pair_order(case: QueryCase) -> str:
    """``ab`` when document A precedes B in the case, else ``ba``."""
    assert case.positive_pair is not None
    a, b = case.positive_pair
    return "ab" if a < b else "ba"


async def experiment3(
    cases: Sequence[QueryCase],
    oracle: UtilityOracle,
    methods: Sequence[str | AttributionMethod],
    settings: EstimatorSettings | None = None,
    max_concurrent_cases: int = 8,
    progress: bool = False,
) -> ExperimentReport:
    """
    Normalized scores of the positive pair per method, scenario and order.

    Each score vector is min-max normalized; a constant vector is flagged
    degenerate and excluded. The ``ab_table`` summary holds, per method,
    scenario and order, mean normalized A and B scores and the mean score of
    the first-placed positive minus the second-placed one.
    """
    parsed = [parse_method(m) for m in methods]
    base = settings or EstimatorSettings()
    report = ExperimentReport(
        3, cases=len(cases), metadata=_metadata(parsed, [base.budget], [base.seed], base)
    )
    eligible = []
    for case in cases:
        if case.positive_pair is None:
            report.skipped[case.case_id] = "missing positive_pair"
        else:
            eligible.append(case)
    if report.skipped:
        logger.warning(
            f"experiment 3 skipped {len(report.skipped)} cases without a positive pair",
            extra={"skipped": sorted(report.skipped)},
        )

    async def evaluate(case: QueryCase):
        results = []
        for method in parsed:
            vector = await run_method(method, case, oracle, base)
            results.append((method, vector, min_max_normalize(vector.scores)))
        return results

    cells: dict[tuple[str, str, str], list[tuple[float, float, float]]] = defaultdict(list)
    for case, results in await _for_each_case(eligible, evaluate, report, max_concurrent_cases, progress):
        a, b = case.positive_pair  # type: ignore[misc]
        order = pair_order(case)
        scenario = case.scenario_tag.value
        first, second = min(a, b), max(a, b)
        for method, vector, normalized in results:
            if normalized is None:
                report.degenerate.append((case.case_id, method.value))
                continue
            base_row = (case.case_id, f"{scenario}/{order}", method.value, vector.budget, vector.seed)
            report.rows.append(ReportRow(*base_row, "norm_a", None, float(normalized[a])))
            report.rows.append(ReportRow(*base_row, "norm_b", None, float(normalized[b])))
            cells[(method.value, scenario, order)].append(
                (float(normalized[a]), float(normalized[b]), float(normalized[first] - normalized[second]))
            )

    table: dict[str, dict[str, dict[str, dict[str, float]]]] = {}
    for (method_name, scenario, order), values in sorted(cells.items()):
        data = np.asarray(values)
        table.setdefault(method_name, {}).setdefault(scenario, {})[order] = {
            "mean_a": float(data[:, 0].mean()),
            "mean_b": float(data[:, 1].mean()),
            "first_minus_second": float(data[:, 2].mean()),
            "count": int(data.shape[0]),
        }
    report.tables["ab_table"] = table
    return report
