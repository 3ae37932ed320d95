"""
Command-line interface.

    fastattribution attribute cases.jsonl --methods shapley,kernel_shap --budgets 64
    fastattribution experiment 1 games.jsonl --methods loo,kernel_shap --out runs/
    fastattribution gen-synthetic --kind synergy --count 20 --seed 7 --out synergy.jsonl
    fastattribution gen-games --count 100 --out games.jsonl
    fastattribution cache stats runs/cache.jsonl --cases games.jsonl

Exit codes: 0 success, 1 oracle or runtime failure, 2 usage or configuration error.
Credentials are read from the environment variable named by ``--api-key-env``.
"""

import argparse
import asyncio
import sys
from collections import defaultdict
from collections.abc import Callable, Sequence
from dataclasses import replace
from pathlib import Path
from typing import Any

from fastattribution.base import UtilityOracle
from fastattribution.cache import UtilityCache
from fastattribution.config import RunConfig, resolve_run_config
from fastattribution.datasets import (
    ScenarioTemplate,
    attach_synthetic_game,
    generate_game_cases,
    generate_scenario_cases,
    load_cases,
    save_cases,
)
from fastattribution.estimators import RANDOMIZED_METHODS, parse_method, run_method
from fastattribution.exceptions import AttributionError, BoundsError, ConfigError, DatasetError
from fastattribution.experiments import ExperimentReport, experiment1, experiment2, experiment3
from fastattribution.games import GameKind
from fastattribution.logging import configure_logging, get_logger
from fastattribution.models import AttributionVector, QueryCase, ScenarioTag
from fastattribution.oracles import OracleKind, create_oracle
from fastattribution.scoring import ADAPTERS
from fastattribution.storage import atomic_write_text


logger = get_logger("cli")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

TARGETS_FILE = "cases.targets.jsonl"


def _int_list(text: str) -> list[int]:
    try:
        return [int(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def _run_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    group = parent.add_argument_group("run options")
    group.add_argument("--config", help="TOML run file with [oracle], [run] and [estimators] sections")
    group.add_argument("--oracle", choices=[k.value for k in OracleKind], help="oracle kind")
    group.add_argument("--endpoint", help="scoring endpoint base URL (remote_llm)")
    group.add_argument("--model", help="model id sent to the endpoint and used in cache keys")
    group.add_argument("--adapter", choices=sorted(ADAPTERS), help="endpoint wire format")
    group.add_argument("--template", help="prompt template id")
    group.add_argument("--api-key-env", help="environment variable holding the endpoint credential")
    group.add_argument("--cache", help="JSONL utility cache path")
    group.add_argument("--methods", type=_str_list, help="comma-separated attribution methods")
    group.add_argument("--budgets", type=_int_list, help="comma-separated budgets")
    group.add_argument("--seeds", type=_int_list, help="comma-separated seeds")
    group.add_argument("--seed", type=int, help="single seed (shorthand for --seeds N)")
    group.add_argument("--k", type=_int_list, help="comma-separated top-k sizes")
    group.add_argument("--out", help="output directory")
    group.add_argument("--parallelism", type=int, help="concurrent oracle evaluations")
    group.add_argument(
        "--progress",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="show a progress bar (default: when stderr is a terminal)",
    )
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fastattribution",
        description="Document attribution for retrieval-augmented generation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
    )
    parser.add_argument(
        "--log-level",
        default="WARNING",
        type=str.upper,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    run_options = _run_options()

    attribute = subparsers.add_parser(
        "attribute", parents=[run_options], help="score the documents of each case"
    )
    attribute.add_argument("cases", help="JSONL case file")
    attribute.add_argument("--case-id", action="append", help="only this case (repeatable)")
    attribute.set_defaults(handler=cmd_attribute)

    experiment = subparsers.add_parser(
        "experiment", parents=[run_options], help="run an evaluation protocol"
    )
    experiment.add_argument("which", type=int, choices=[1, 2, 3])
    experiment.add_argument("cases", help="JSONL case file")
    experiment.set_defaults(handler=cmd_experiment)

    synthetic = subparsers.add_parser("gen-synthetic", help="generate scenario cases (AB and BA)")
    synthetic.add_argument(
        "--kind",
        required=True,
        choices=[t.value for t in ScenarioTag if t is not ScenarioTag.NONE],
    )
    synthetic.add_argument("--count", type=int, default=20)
    synthetic.add_argument("--seed", type=int, default=0)
    synthetic.add_argument("--n-docs", type=int, default=10)
    synthetic.add_argument("--positions", type=_int_list, default=[0, 1])
    synthetic.add_argument("--lexicon-size", type=int, default=64)
    synthetic.add_argument(
        "--attach-game",
        action="store_true",
        help="embed a synthetic game so the cases run without a model",
    )
    synthetic.add_argument("--pair-value", type=float, default=1.0)
    synthetic.add_argument("--out", required=True)
    synthetic.set_defaults(handler=cmd_gen_synthetic)

    games = subparsers.add_parser("gen-games", help="generate retrieval-style synthetic game cases")
    games.add_argument("--count", type=int, default=100)
    games.add_argument("--n-docs", type=int, default=10)
    games.add_argument("--seed", type=int, default=0)
    games.add_argument("--kinds", type=_str_list, default=[k.value for k in GameKind])
    games.add_argument("--pair-value", type=float, default=4.0)
    games.add_argument("--noise", type=float, default=0.02, help="noise σ as a fraction of |v(D)|")
    games.add_argument("--out", required=True)
    games.set_defaults(handler=cmd_gen_games)

    cache = subparsers.add_parser("cache", help="inspect a utility cache")
    cache.add_argument("action", choices=["inspect", "stats"])
    cache.add_argument("path")
    cache.add_argument("--cases", help="case file giving document counts for coverage")
    cache.add_argument("--case-id", action="append", help="only this case (repeatable)")
    cache.set_defaults(handler=cmd_cache)
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    seeds = args.seeds if args.seeds is not None else ([args.seed] if args.seed is not None else None)
    overrides = {
        "oracle": {
            "kind": args.oracle,
            "endpoint_url": args.endpoint,
            "model_id": args.model,
            "adapter": args.adapter,
            "prompt_template_id": args.template,
            "api_key_env": args.api_key_env,
            "cache_path": args.cache,
        },
        "run": {
            "methods": args.methods,
            "budgets": args.budgets,
            "seeds": seeds,
            "ks": args.k,
            "output_dir": args.out,
            "parallelism": args.parallelism,
        },
    }
    return resolve_run_config(args.config, overrides)


def _progress(args: argparse.Namespace) -> bool:
    return sys.stderr.isatty() if args.progress is None else bool(args.progress)


def _select(cases: list[QueryCase], case_ids: Sequence[str] | None) -> list[QueryCase]:
    if not case_ids:
        return cases
    by_id = {case.case_id: case for case in cases}
    missing = [case_id for case_id in case_ids if case_id not in by_id]
    if missing:
        raise DatasetError(f"unknown case ids: {', '.join(missing)}", field="id")
    return [by_id[case_id] for case_id in dict.fromkeys(case_ids)]


async def ensure_targets(
    cases: list[QueryCase],
    oracle: UtilityOracle,
    output_dir: Path,
) -> list[QueryCase]:
    """
    Fill in missing target responses for a remote oracle.

    Targets are generated once, stored in ``<output_dir>/cases.targets.jsonl``
    and reused by later runs so every run explains the same responses.
    """
    if oracle.kind != OracleKind.REMOTE_LLM.value:
        return cases
    targets_path = output_dir / TARGETS_FILE
    stored: dict[str, QueryCase] = {}
    if targets_path.is_file():
        stored = {case.case_id: case for case in load_cases(targets_path)}
    filled = [
        replace(case, target_response=stored[case.case_id].target_response)
        if case.target_response is None and case.case_id in stored
        else case
        for case in cases
    ]
    missing = [i for i, case in enumerate(filled) if case.target_response is None]
    if not missing:
        return filled
    logger.info(
        f"generating {len(missing)} target responses",
        extra={"cases": len(missing), "model_id": oracle.model_id},
    )
    generated = await asyncio.gather(*(oracle.generate_target(filled[i]) for i in missing))
    for i, case in zip(missing, generated, strict=True):
        filled[i] = case
        stored[case.case_id] = case
    save_cases(sorted(stored.values(), key=lambda c: c.case_id), targets_path)
    return filled


def _grid(method: str, config: RunConfig) -> list[tuple[int, int]]:
    if parse_method(method) in RANDOMIZED_METHODS:
        return [(budget, seed) for budget in config.budgets for seed in config.seeds]
    return [(config.budgets[0], 0)]


def format_vector(case: QueryCase, vector: AttributionVector) -> str:
    """Scores of one run as a rank-ordered text table."""
    flag = "  [low confidence]" if vector.low_confidence else ""
    lines = [
        f"case {case.case_id}  method={vector.method.value} budget={vector.budget} "
        f"seed={vector.seed} calls={vector.oracle_calls}{flag}",
        f"{'rank':>4}  {'doc':<16} {'label':<14} {'score':>14}",
    ]
    for position, index in enumerate(vector.ranking(), start=1):
        document = case.documents[index]
        lines.append(
            f"{position:>4}  {document.doc_id:<16} {document.label.value:<14} {vector.scores[index]:>14.6f}"
        )
    return "\n".join(lines)


async def _attribute(cases: list[QueryCase], config: RunConfig) -> list[AttributionVector]:
    async with create_oracle(config.oracle) as oracle:
        cases = await ensure_targets(cases, oracle, config.output_dir)
        vectors = []
        for case in cases:
            for method in config.methods:
                for budget, seed in _grid(method, config):
                    vector = await run_method(method, case, oracle, config.settings(budget, seed))
                    print(format_vector(case, vector), end="\n\n")
                    vectors.append(vector)
        logger.info(
            f"attribution finished with {oracle.calls} oracle calls",
            extra={"oracle_calls": oracle.calls, "cases": len(cases)},
        )
    return vectors


def cmd_attribute(args: argparse.Namespace) -> int:
    config = _run_config(args)
    cases = _select(load_cases(args.cases), args.case_id)
    vectors = asyncio.run(_attribute(cases, config))
    path = atomic_write_text(
        config.output_dir / "attributions.jsonl",
        "".join(vector.to_json() + "\n" for vector in vectors),
    )
    print(f"wrote {len(vectors)} attribution vectors to {path}")
    return EXIT_OK


async def _experiment(
    which: int, cases: list[QueryCase], config: RunConfig, progress: bool
) -> ExperimentReport:
    options: dict[str, Any] = {"max_concurrent_cases": config.parallelism, "progress": progress}
    if config.ks and which != 3:
        options["ks"] = config.ks
    async with create_oracle(config.oracle) as oracle:
        cases = await ensure_targets(cases, oracle, config.output_dir)
        if which == 1:
            return await experiment1(
                cases, oracle, config.methods, config.budgets, config.seeds, config.settings(), **options
            )
        if which == 2:
            return await experiment2(
                cases, oracle, config.methods, config.budgets, seeds=config.seeds,
                settings=config.settings(), **options,
            )
        # one run per method at the largest budget
        return await experiment3(
            cases, oracle, config.methods, config.settings(budget=max(config.budgets)), **options
        )


def cmd_experiment(args: argparse.Namespace) -> int:
    config = _run_config(args)
    cases = load_cases(args.cases)
    report = asyncio.run(_experiment(args.which, cases, config, _progress(args)))
    csv_path, summary_path = report.write(config.output_dir)
    print(f"wrote {csv_path} and {summary_path}")
    if report.skipped:
        print(f"warning: {len(report.skipped)} incompatible cases skipped", file=sys.stderr)
    if report.degenerate:
        print(f"warning: {len(report.degenerate)} degenerate score vectors excluded", file=sys.stderr)
    if report.failed:
        for case_id, reason in sorted(report.failed.items()):
            print(f"error: case {case_id}: {reason}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_gen_synthetic(args: argparse.Namespace) -> int:
    if len(args.positions) != 2:
        raise ConfigError("--positions needs exactly two indices")
    template = ScenarioTemplate(kind=args.kind, rng_seed=args.seed, lexicon_size=args.lexicon_size)
    cases = generate_scenario_cases(template, args.count, args.n_docs, tuple(args.positions))
    if args.attach_game:
        cases = [replace(case, game=attach_synthetic_game(case, pair_value=args.pair_value)) for case in cases]
    path = save_cases(cases, args.out)
    print(f"wrote {len(cases)} cases to {path}")
    return EXIT_OK


def cmd_gen_games(args: argparse.Namespace) -> int:
    try:
        kinds = [GameKind(kind) for kind in args.kinds]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cases = generate_game_cases(
        args.count,
        n_docs=args.n_docs,
        seed=args.seed,
        kinds=kinds,
        pair_value=args.pair_value,
        noise_fraction=args.noise,
    )
    path = save_cases(cases, args.out)
    print(f"wrote {len(cases)} cases to {path}")
    return EXIT_OK


def cmd_cache(args: argparse.Namespace) -> int:
    path = Path(args.path)
    if not path.is_file():
        raise DatasetError(f"cache file not found: {path}")
    cache = UtilityCache(path)
    sizes = {case.case_id: case.n for case in load_cases(args.cases)} if args.cases else {}
    wanted = set(args.case_id or ())
    entries = sorted(
        (e for e in cache.entries() if not wanted or e.case_id in wanted),
        key=lambda e: (e.case_id, e.model_id, e.coalition_bits),
    )

    if args.action == "inspect":
        for entry in entries:
            width = sizes.get(entry.case_id, max(entry.coalition_bits.bit_length(), 1))
            mask = format(entry.coalition_bits, f"0{width}b")[::-1]
            print(f"{entry.case_id}\t{entry.model_id}\t{mask}\t{entry.value!r}\t{entry.token_count}")
    else:
        groups: dict[tuple[str, str], list[int]] = defaultdict(list)
        for entry in entries:
            groups[(entry.case_id, entry.model_id)].append(entry.coalition_bits)
        print(f"records: {len(entries)}")
        print(f"total tokens: {sum(e.token_count for e in entries)}")
        for (case_id, model_id), bits in sorted(groups.items()):
            n = sizes.get(case_id)
            note = ""
            if n is None:
                n = max(b.bit_length() for b in bits)
                note = " (n inferred)"
            total = 1 << n
            print(f"{case_id}\t{model_id}\tcoverage {len(bits)}/{total} ({100.0 * len(bits) / total:.1f}%){note}")

    for line, error in cache.stats.corrupt_lines:
        print(f"warning: line {line}: {error}", file=sys.stderr)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    configure_logging(args.log_level)
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except (ConfigError, DatasetError, BoundsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AttributionError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
