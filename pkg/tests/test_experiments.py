"""
Tests for the evaluation protocols.
"""

import json
import math
from dataclasses import replace

import pytest

from fastattribution import (
    BoundsError,
    DocumentLabel,
    EstimatorSettings,
    GameKind,
    ScenarioTemplate,
    SyntheticOracle,
    attach_synthetic_game,
    exhaustive_impact_set,
    experiment1,
    experiment2,
    experiment3,
    generate_scenario_cases,
)
from fastattribution.experiments import CSV_HEADER, pair_order


def by_metric(report, method, metric, k=None):
    return [r for r in report.rows if r.method == method and r.metric == metric and r.k == k]


def summary_entry(report, method, metric, k=None):
    return next(
        e for e in report.summary()["means"] if e["method"] == method and e["metric"] == metric and e["k"] == k
    )


@pytest.fixture
def game_cases(make_game_case):
    return [
        make_game_case([1.0, 2.0, 3.0], case_id="c1"),
        make_game_case([3.0, 0.5, 1.0], case_id="c2"),
    ]


@pytest.fixture
def scenario_cases():
    """Two synergy and two redundancy base cases, both orders, five documents each."""
    cases = []
    for kind in ("synergy", "redundancy"):
        for case in generate_scenario_cases(ScenarioTemplate(kind, rng_seed=2), count=2, n_docs=5):
            cases.append(replace(case, game=attach_synthetic_game(case, weights=[0.0] * 5, pair_value=1.0)))
    return cases


class TestExhaustiveImpactSet:
    """Tests for the exhaustive top-k removal search."""

    async def test_additive(self, make_game_case, synthetic_oracle):
        case = make_game_case([0.5, 3.0, 1.0, 2.0])

        impact = await exhaustive_impact_set(case, synthetic_oracle, 2)

        assert impact.members.indices() == (1, 3)
        assert impact.drop == pytest.approx(5.0)

    async def test_redundant_pair_found_jointly(self, make_game_case, synthetic_oracle):
        case = make_game_case([0.0, 0.0, 1.0, 0.5], GameKind.REDUNDANCY, (0, 1), pair_value=5.0)

        single = await exhaustive_impact_set(case, synthetic_oracle, 1)
        pair = await exhaustive_impact_set(case, synthetic_oracle, 2)

        assert single.members.indices() == (2,)
        assert pair.members.indices() == (0, 1)
        assert pair.drop == pytest.approx(5.0)

    async def test_ties_go_to_smallest_mask(self, make_game_case, synthetic_oracle):
        case = make_game_case([1.0, 1.0, 1.0])

        impact = await exhaustive_impact_set(case, synthetic_oracle, 1)

        assert impact.members.indices() == (0,)

    async def test_too_many_players(self, make_game_case, synthetic_oracle):
        with pytest.raises(BoundsError):
            await exhaustive_impact_set(make_game_case([1.0] * 4), synthetic_oracle, 2, max_players=3)


class TestExperiment1:
    """Tests for agreement with exact Shapley values."""

    async def test_rows_per_grid_point(self, game_cases, synthetic_oracle):
        report = await experiment1(
            game_cases, synthetic_oracle, ["loo", "kernel_shap"], budgets=[8], seeds=[0, 1]
        )

        # loo once, kernel_shap per seed; 3 correlations plus precision@1 and @3 each
        assert len(report.rows) == 2 * 3 * 5
        assert {r.seed for r in by_metric(report, "loo", "spearman")} == {0}
        assert [r.case_id for r in report.rows[:15]] == ["c1"] * 15

    async def test_full_budget_kernel_is_exact(self, game_cases, synthetic_oracle):
        report = await experiment1(game_cases, synthetic_oracle, ["kernel_shap"], budgets=[8], seeds=[0])

        assert all(r.value == pytest.approx(1.0) for r in by_metric(report, "kernel_shap", "spearman"))
        assert summary_entry(report, "kernel_shap", "precision_at_k", 1)["mean"] == 1.0
        assert summary_entry(report, "kernel_shap", "spearman")["count"] == 2

    async def test_constant_reference_is_undefined(self, make_game_case, synthetic_oracle):
        cases = [make_game_case([1.0, 1.0, 1.0], case_id="flat"), make_game_case([1.0, 2.0, 3.0], case_id="ok")]

        report = await experiment1(cases, synthetic_oracle, ["loo"], budgets=[8])
        entry = summary_entry(report, "loo", "spearman")

        assert math.isnan(by_metric(report, "loo", "spearman")[0].value)
        assert entry["undefined"] == 1
        assert entry["count"] == 1
        assert entry["mean"] == pytest.approx(1.0)
        assert "nan" in report.to_csv()

    async def test_failed_case_is_recorded(self, game_cases, text_case, synthetic_oracle):
        report = await experiment1([*game_cases, text_case], synthetic_oracle, ["loo"], budgets=[8])

        assert "paris" in report.failed
        assert report.failed["paris"].startswith("DatasetError")
        assert report.summary()["evaluated"] == 2
        assert all(r.case_id != "paris" for r in report.rows)

    async def test_label_mass_rows(self, make_game_case, synthetic_oracle):
        case = make_game_case([2.0, 1.0, 1.0])
        labels = (DocumentLabel.RELEVANT, DocumentLabel.HARD_NEGATIVE, DocumentLabel.SOFT_NEGATIVE)
        documents = tuple(replace(d, label=label) for d, label in zip(case.documents, labels, strict=True))
        case = replace(case, documents=documents)

        report = await experiment1([case], synthetic_oracle, ["loo"], budgets=[8])
        mass = {r.scenario: r.value for r in report.rows if r.metric == "label_mass"}

        assert mass == {"label:relevant": 0.5, "label:hard_negative": 0.25, "label:soft_negative": 0.25}
        labelled = [e for e in report.summary()["means"] if e["metric"] == "label_mass"]
        assert {e["label"] for e in labelled} == {"relevant", "hard_negative", "soft_negative"}


class TestExperiment2:
    """Tests for precision against exhaustive impact sets."""

    async def test_rows(self, make_game_case, synthetic_oracle):
        case = make_game_case([0.5, 3.0, 1.0, 2.0])

        report = await experiment2([case], synthetic_oracle, ["loo"], budgets=[8])

        drops = {r.k: r.value for r in report.rows if r.method == "exhaustive"}
        assert drops == {2: 5.0, 3: 6.0, 4: 6.5}
        assert [r.value for r in report.rows if r.metric == "impact_precision_at_k"] == [1.0, 1.0, 1.0]

    async def test_leave_one_out_misses_redundant_pair(self, make_game_case, synthetic_oracle):
        case = make_game_case([0.0, 0.0, 1.0, 0.5], GameKind.REDUNDANCY, (0, 1), pair_value=5.0)

        report = await experiment2([case], synthetic_oracle, ["loo"], budgets=[8], ks=[2])

        assert by_metric(report, "loo", "impact_precision_at_k", 2)[0].value == 0.0


class TestExperiment3:
    """Tests for the positional A/B analysis."""

    async def test_ab_table(self, scenario_cases, synthetic_oracle):
        report = await experiment3(scenario_cases, synthetic_oracle, ["shapley", "loo"])
        table = report.tables["ab_table"]

        synergy_ab = table["shapley"]["synergy"]["ab"]
        assert synergy_ab["mean_a"] == 1.0
        assert synergy_ab["mean_b"] == 1.0
        assert synergy_ab["first_minus_second"] == 0.0
        assert synergy_ab["count"] == 2
        assert set(table["shapley"]["synergy"]) == {"ab", "ba"}

    async def test_degenerate_vectors_excluded(self, scenario_cases, synthetic_oracle):
        report = await experiment3(scenario_cases, synthetic_oracle, ["loo"])

        # leave-one-out scores both redundant positives zero, like every negative
        degenerate_ids = {case_id for case_id, method in report.degenerate}
        assert degenerate_ids == {c.case_id for c in scenario_cases if c.case_id.startswith("redundancy")}
        assert "redundancy" not in report.tables["ab_table"]["loo"]

    async def test_rows_encode_order(self, scenario_cases, synthetic_oracle):
        report = await experiment3(scenario_cases[:2], synthetic_oracle, ["shapley"])

        assert {r.scenario for r in report.rows} == {"synergy/ab", "synergy/ba"}
        assert {r.metric for r in report.rows} == {"norm_a", "norm_b"}
        assert pair_order(scenario_cases[1]) == "ba"

    async def test_cases_without_pair_are_skipped(self, scenario_cases, additive_case, synthetic_oracle):
        report = await experiment3([*scenario_cases[:2], additive_case], synthetic_oracle, ["loo"])

        assert report.skipped == {"q1": "missing positive_pair"}
        assert report.summary()["evaluated"] == 2

    async def test_runs_at_settings_budget(self, scenario_cases, synthetic_oracle):
        settings = EstimatorSettings(budget=16, seed=3)

        report = await experiment3(scenario_cases[:2], synthetic_oracle, ["kernel_shap"], settings=settings)

        assert {(r.budget, r.seed) for r in report.rows} == {(16, 3)}


class TestReports:
    """Tests for CSV and summary output."""

    async def test_csv_layout(self, game_cases, synthetic_oracle):
        report = await experiment1(game_cases, synthetic_oracle, ["loo"], budgets=[8])

        lines = report.to_csv().splitlines()

        assert lines[0] == ",".join(CSV_HEADER)
        assert lines[1].startswith("c1,none,loo,8,0,spearman,,")
        assert len(lines) == 1 + len(report.rows)

    async def test_rerun_is_byte_identical(self, game_cases, tmp_path):
        settings = EstimatorSettings(seed=0)
        paths = []
        for run, concurrency in (("a", 1), ("b", 8)):
            report = await experiment1(
                game_cases,
                SyntheticOracle(),
                ["tmc", "beta", "context_cite"],
                budgets=[6, 8],
                seeds=[0, 1],
                settings=settings,
                max_concurrent_cases=concurrency,
            )
            paths.append(report.write(tmp_path / run))

        (csv_a, json_a), (csv_b, json_b) = paths
        assert csv_a.name == "experiment1.csv"
        assert json_a.name == "experiment1.summary.json"
        assert csv_a.read_bytes() == csv_b.read_bytes()
        assert json_a.read_bytes() == json_b.read_bytes()

    async def test_summary_json(self, game_cases, synthetic_oracle, tmp_path):
        report = await experiment1(game_cases, synthetic_oracle, ["loo"], budgets=[8, 16])

        _, json_path = report.write(tmp_path)
        summary = json.loads(json_path.read_text())

        assert summary["experiment"] == 1
        assert summary["cases"] == 2
        assert summary["metadata"]["methods"] == ["loo"]
        assert {e["budget"] for e in summary["means"]} == {8, 16}
