"""
Run configuration.

A run is described by three TOML sections; any key may be omitted:

    [oracle]
    kind = "remote_llm"                 # or "synthetic"
    model_id = "mistral-7b-instruct"
    endpoint_url = "http://localhost:8000/v1"
    adapter = "openai"                  # or "native"
    prompt_template_id = "default"
    cache_path = "runs/cache.jsonl"
    api_key_env = "FASTATTRIBUTION_API_KEY"
    require_api_key = false
    timeout = 60.0
    max_retries = 4
    backoff_base = 0.5
    backoff_cap = 16.0
    max_new_tokens = 256

    [run]
    methods = ["loo", "tmc", "beta", "kernel_shap", "context_cite"]
    budgets = [32, 64, 100]
    seeds = [0]
    ks = [2, 3, 4, 5]
    output_dir = "runs"
    parallelism = 8

    [estimators]
    tmc_truncation_tol = 0.01
    beta_alpha = 0.5
    beta_beta = 0.5
    lasso_lambda = "auto"
    surrogate_mask_prob = 0.5
    max_samples = 20000

Values resolve as command-line flags, then the file, then built-in defaults.
``parallelism`` sets the oracle's ``max_parallel``. Leaving ``ks`` unset keeps
each experiment's own k values.
"""

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any


if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from fastattribution.estimators import EstimatorSettings, parse_method
from fastattribution.exceptions import ConfigError
from fastattribution.experiments import DEFAULT_BUDGETS
from fastattribution.oracles import OracleConfig


SECTIONS = ("oracle", "run", "estimators")

DEFAULT_METHODS = ("loo", "tmc", "beta", "kernel_shap", "context_cite")

# budget and seed come from the [run] grid, not from [estimators]
_ESTIMATOR_KEYS = frozenset(f.name for f in fields(EstimatorSettings)) - {"budget", "seed"}
_ORACLE_KEYS = frozenset(f.name for f in fields(OracleConfig)) - {"max_parallel"}


@dataclass
class RunConfig:
    """
    Everything one CLI run needs.

    Attributes:
        oracle: Utility oracle settings.
        methods: Attribution methods to run, by name.
        budgets: Budget grid for the randomized methods.
        seeds: Seeds for the randomized methods.
        ks: Top-k sizes for precision metrics; empty uses each experiment's own.
        output_dir: Directory receiving reports and artifacts.
        parallelism: Concurrent oracle evaluations and cases in flight.
        estimators: Estimator settings; budget and seed vary over the grid.

    Example:
        ```python
        from fastattribution import RunConfig

        config = RunConfig(methods=["kernel_shap"], budgets=[64], seeds=[0, 1, 2])
        ```
    """

    oracle: OracleConfig = field(default_factory=OracleConfig)
    methods: list[str] = field(default_factory=lambda: list(DEFAULT_METHODS))
    budgets: list[int] = field(default_factory=lambda: list(DEFAULT_BUDGETS))
    seeds: list[int] = field(default_factory=lambda: [0])
    ks: list[int] = field(default_factory=list)
    output_dir: Path = field(default_factory=lambda: Path("runs"))
    parallelism: int = 8
    estimators: EstimatorSettings = field(default_factory=EstimatorSettings)

    def __post_init__(self) -> None:
        if not self.methods:
            raise ConfigError("at least one method is required")
        self.methods = [parse_method(m).value for m in self.methods]
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.budgets:
            raise ConfigError("at least one budget is required")
        if any(int(b) < 2 for b in self.budgets):
            raise ConfigError(f"budgets must be at least 2, got {self.budgets}")
        if any(int(k) < 1 for k in self.ks):
            raise ConfigError(f"k values must be positive, got {self.ks}")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be at least 1")
        self.budgets = [int(b) for b in self.budgets]
        self.seeds = [int(s) for s in self.seeds]
        self.ks = [int(k) for k in self.ks]
        self.output_dir = Path(self.output_dir)
        if self.oracle.max_parallel != self.parallelism:
            self.oracle = replace(self.oracle, max_parallel=self.parallelism)

    def settings(self, budget: int | None = None, seed: int | None = None) -> EstimatorSettings:
        """Estimator settings at one grid point (first budget and seed by default)."""
        return replace(
            self.estimators,
            budget=self.budgets[0] if budget is None else budget,
            seed=self.seeds[0] if seed is None else seed,
        )


def read_config_file(path: str | Path) -> dict[str, dict[str, Any]]:
    """
    Parse a TOML run file into its sections.

    Raises:
        ConfigError: If the file is missing, malformed, or has unknown sections or keys.
    """
    source = Path(path)
    try:
        with source.open("rb") as handle:
            data = tomllib.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {source}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid config file {source}: {exc}") from None

    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)} in {source}")
    sections = {name: dict(data.get(name, {})) for name in SECTIONS}
    _check_keys("oracle", sections["oracle"], _ORACLE_KEYS)
    _check_keys("run", sections["run"], frozenset(f.name for f in fields(RunConfig)) - {"oracle", "estimators"})
    _check_keys("estimators", sections["estimators"], _ESTIMATOR_KEYS)
    return sections


def _check_keys(section: str, values: dict[str, Any], allowed: frozenset[str]) -> None:
    unknown = set(values) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")


def resolve_run_config(
    path: str | Path | None = None,
    overrides: dict[str, dict[str, Any]] | None = None,
) -> RunConfig:
    """
    Build a RunConfig from defaults, an optional file and flag overrides.

    Override values of None count as unset, so parsed-but-absent flags never
    mask the file.

    Example:
        ```python
        config = resolve_run_config(
            "run.toml",
            {"run": {"budgets": [64]}, "oracle": {"cache_path": None}},
        )
        ```
    """
    merged: dict[str, dict[str, Any]] = {name: {} for name in SECTIONS}
    if path is not None:
        for name, values in read_config_file(path).items():
            merged[name].update(values)
    for name, values in (overrides or {}).items():
        if name not in merged:
            raise ConfigError(f"unknown config section {name!r}")
        merged[name].update({k: v for k, v in values.items() if v is not None})

    try:
        oracle = OracleConfig(**merged["oracle"])
        estimators = EstimatorSettings(**merged["estimators"])
        return RunConfig(oracle=oracle, estimators=estimators, **merged["run"])
    except TypeError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
