"""
FastMVC Attribution - document attribution for retrieval-augmented generation.

Scores how much each retrieved document contributes to a fixed generated
response, with exact Shapley values, budgeted estimators and evaluation
protocols that compare them.
"""

from fastattribution.base import UtilityOracle

# ============================================================================
# Coalitions & Games
# ============================================================================
from fastattribution.coalition import (
    MAX_PLAYERS,
    CoalitionMask,
    enumerate_coalitions,
    enumerate_k_subsets,
    shapley_weight,
)
from fastattribution.games import GameKind, GameSpec, synthetic_utility

# ============================================================================
# Domain Types
# ============================================================================
from fastattribution.models import (
    AttributionMethod,
    AttributionVector,
    Document,
    DocumentLabel,
    QueryCase,
    ScenarioTag,
    UtilityRecord,
)

# ============================================================================
# Oracles
# ============================================================================
from fastattribution.cache import CachedUtility, UtilityCache
from fastattribution.prompts import PROMPT_TEMPLATES, PromptTemplate, build_prompt
from fastattribution.scoring import RetryConfig, ScoredContinuation, ScoringClient
from fastattribution.oracles import (
    OracleConfig,
    OracleKind,
    RemoteLLMOracle,
    SyntheticOracle,
    create_oracle,
    generate_target_response,
    utility,
)

# ============================================================================
# Estimators & Solvers
# ============================================================================
from fastattribution.regress import (
    DesignMatrix,
    RegressionResult,
    cross_validate_lasso,
    solve_constrained_wls,
    solve_lasso,
    solve_wls,
)
from fastattribution.estimators import (
    EstimatorSettings,
    beta_shapley,
    context_cite,
    exact_shapley,
    kernel_shap,
    loo,
    run_method,
    tmc_shapley,
)

# ============================================================================
# Evaluation
# ============================================================================
from fastattribution.metrics import (
    kendall_tau,
    min_max_normalize,
    pearson,
    precision_at_k,
    spearman,
    top_k,
)
from fastattribution.experiments import (
    ExperimentReport,
    ImpactSet,
    exhaustive_impact_set,
    experiment1,
    experiment2,
    experiment3,
)

# ============================================================================
# Datasets & Configuration
# ============================================================================
from fastattribution.datasets import (
    ScenarioTemplate,
    attach_synthetic_game,
    generate_game_cases,
    generate_scenario_cases,
    load_cases,
    save_cases,
)
from fastattribution.config import RunConfig, resolve_run_config
from fastattribution.exceptions import (
    AttributionError,
    BoundsError,
    ConfigError,
    DatasetError,
    InputTooLongError,
    OracleCapabilityError,
    OracleError,
    OracleTransportError,
    SingularSystemError,
    UndefinedCorrelationError,
)
from fastattribution.logging import OracleCallLogger, configure_logging, get_logger


__version__ = "0.1.0"

__all__ = [
    # Base
    "UtilityOracle",

    # Coalitions & Games
    "MAX_PLAYERS",
    "CoalitionMask",
    "enumerate_coalitions",
    "enumerate_k_subsets",
    "shapley_weight",
    "GameKind",
    "GameSpec",
    "synthetic_utility",

    # Domain Types
    "AttributionMethod",
    "AttributionVector",
    "Document",
    "DocumentLabel",
    "QueryCase",
    "ScenarioTag",
    "UtilityRecord",

    # Oracles
    "CachedUtility",
    "UtilityCache",
    "PROMPT_TEMPLATES",
    "PromptTemplate",
    "build_prompt",
    "RetryConfig",
    "ScoredContinuation",
    "ScoringClient",
    "OracleConfig",
    "OracleKind",
    "RemoteLLMOracle",
    "SyntheticOracle",
    "create_oracle",
    "generate_target_response",
    "utility",

    # Estimators & Solvers
    "DesignMatrix",
    "RegressionResult",
    "cross_validate_lasso",
    "solve_constrained_wls",
    "solve_lasso",
    "solve_wls",
    "EstimatorSettings",
    "beta_shapley",
    "context_cite",
    "exact_shapley",
    "kernel_shap",
    "loo",
    "run_method",
    "tmc_shapley",

    # Evaluation
    "kendall_tau",
    "min_max_normalize",
    "pearson",
    "precision_at_k",
    "spearman",
    "top_k",
    "ExperimentReport",
    "ImpactSet",
    "exhaustive_impact_set",
    "experiment1",
    "experiment2",
    "experiment3",

    # Datasets & Configuration
    "ScenarioTemplate",
    "attach_synthetic_game",
    "generate_game_cases",
    "generate_scenario_cases",
    "load_cases",
    "save_cases",
    "RunConfig",
    "resolve_run_config",

    # Errors & Logging
    "AttributionError",
    "BoundsError",
    "ConfigError",
    "DatasetError",
    "InputTooLongError",
    "OracleCapabilityError",
    "OracleError",
    "OracleTransportError",
    "SingularSystemError",
    "UndefinedCorrelationError",
    "OracleCallLogger",
    "configure_logging",
    "get_logger",
]
