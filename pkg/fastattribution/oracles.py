"""
Utility oracles: the value v(S) of a document coalition.

Two kinds exist. A synthetic oracle reads the game embedded in each case;
a remote oracle scores the fixed target response with a language model,
teacher-forced, given the query and the coalition's documents.
"""

import os
from dataclasses import dataclass, replace
from enum import Enum

import httpx

from fastattribution.base import UtilityOracle
from fastattribution.cache import UtilityCache
from fastattribution.coalition import CoalitionMask
from fastattribution.exceptions import ConfigError, DatasetError
from fastattribution.games import synthetic_utility
from fastattribution.logging import OracleCallLogger, get_logger
from fastattribution.models import QueryCase, UtilityRecord
from fastattribution.prompts import build_prompt, get_template
from fastattribution.scoring import ADAPTERS, RetryConfig, ScoringClient


logger = get_logger("oracle")

DEFAULT_API_KEY_ENV = "FASTATTRIBUTION_API_KEY"


class OracleKind(str, Enum):
    REMOTE_LLM = "remote_llm"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class OracleConfig:
    """
    Configuration for a utility oracle.

    Attributes:
        kind: ``remote_llm`` or ``synthetic``.
        model_id: Model name sent to the endpoint and used in cache keys.
        endpoint_url: Base URL of the scoring endpoint (remote only).
        prompt_template_id: Template used to build prompts.
        max_parallel: Concurrent remote evaluations.
        cache_path: JSONL file persisting utilities; in memory when None.
        api_key_env: Environment variable holding the credential.
        require_api_key: Refuse to start a remote oracle without the credential.
        adapter: Provider schema (``native`` or ``openai``).
        timeout: Per-request timeout in seconds.
        max_retries: Retries for transient failures.
        backoff_base: First retry delay in seconds.
        backoff_cap: Largest retry delay in seconds.
        max_new_tokens: Generation limit for R_target.

    Example:
        ```python
        from fastattribution import OracleConfig

        config = OracleConfig(
            kind="remote_llm",
            model_id="mistral-7b-instruct",
            endpoint_url="http://localhost:8000/v1",
            adapter="openai",
            max_parallel=16,
            cache_path="runs/cache.jsonl",
        )
        ```
    """

    kind: OracleKind = OracleKind.SYNTHETIC
    model_id: str = "synthetic"
    endpoint_url: str = ""
    prompt_template_id: str = "default"
    max_parallel: int = 8
    cache_path: str | None = None
    api_key_env: str = DEFAULT_API_KEY_ENV
    require_api_key: bool = True
    adapter: str = "native"
    timeout: float = 60.0
    max_retries: int = 4
    backoff_base: float = 0.5
    backoff_cap: float = 16.0
    max_new_tokens: int = 256

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "kind", OracleKind(self.kind))
        except ValueError:
            raise ConfigError(
                f"unknown oracle kind {self.kind!r} (known: remote_llm, synthetic)"
            ) from None
        if self.cache_path is not None:
            object.__setattr__(self, "cache_path", str(self.cache_path))
        if not self.model_id:
            raise ConfigError("model_id must not be empty")
        if self.max_parallel < 1:
            raise ConfigError("max_parallel must be at least 1")
        if self.max_retries < 0 or self.backoff_base < 0 or self.backoff_cap < 0:
            raise ConfigError("retry settings must be non-negative")
        get_template(self.prompt_template_id)
        if self.adapter not in ADAPTERS:
            raise ConfigError(f"unknown scoring adapter {self.adapter!r}")
        if self.kind is OracleKind.REMOTE_LLM and not self.endpoint_url:
            raise ConfigError("remote_llm oracle requires endpoint_url")

    def retry_config(self) -> RetryConfig:
        return RetryConfig(
            max_retries=self.max_retries,
            backoff_base=self.backoff_base,
            backoff_cap=self.backoff_cap,
        )

    def api_key(self) -> str | None:
        """
        Credential from the configured environment variable.

        Raises:
            ConfigError: If the credential is required but not set.
        """
        key = os.environ.get(self.api_key_env) or None
        if key is None and self.require_api_key:
            raise ConfigError(
                f"remote oracle needs a credential in ${self.api_key_env} "
                "(or set require_api_key = false for local endpoints)"
            )
        return key


class SyntheticOracle(UtilityOracle):
    """
    Utilities from the synthetic game attached to each case.

    Example:
        ```python
        oracle = SyntheticOracle()
        record = await oracle.utility(case, CoalitionMask.from_indices([0, 2], case.n))
        ```
    """

    kind = OracleKind.SYNTHETIC.value

    def __init__(self, config: OracleConfig | None = None, cache: UtilityCache | None = None) -> None:
        self.config = config or OracleConfig()
        if cache is None:
            cache = UtilityCache(self.config.cache_path)
        super().__init__(self.config.model_id, self.config.max_parallel, cache)

    async def _score(self, case: QueryCase, coalition: CoalitionMask) -> tuple[float, int]:
        if case.game is None:
            raise DatasetError(f"case {case.case_id!r} carries no synthetic game", field="game")
        return synthetic_utility(case.game, coalition), 0


class RemoteLLMOracle(UtilityOracle):
    """
    Teacher-forced log-likelihood of R_target from a scoring endpoint.

    Features:
        - Prompts keep original document order for every coalition
        - At-most-once evaluation per (case, model, coalition) through the cache
        - Concurrent requests bounded by ``max_parallel``
        - Request/response logging through ``OracleCallLogger``

    Example:
        ```python
        async with RemoteLLMOracle(config) as oracle:
            case = await oracle.generate_target(case)
            record = await oracle.utility(case, case.full_mask())
        ```
    """

    kind = OracleKind.REMOTE_LLM.value

    def __init__(
        self,
        config: OracleConfig,
        cache: UtilityCache | None = None,
        http_client: httpx.AsyncClient | None = None,
        scoring_client: ScoringClient | None = None,
        call_logger: OracleCallLogger | None = None,
    ) -> None:
        if config.kind is not OracleKind.REMOTE_LLM:
            raise ConfigError("RemoteLLMOracle requires an oracle config of kind remote_llm")
        self.config = config
        if cache is None:
            cache = UtilityCache(config.cache_path)
        super().__init__(config.model_id, config.max_parallel, cache)
        self.client = scoring_client or ScoringClient(
            config.endpoint_url,
            config.model_id,
            adapter=config.adapter,
            api_key=config.api_key(),
            timeout=config.timeout,
            retry=config.retry_config(),
            client=http_client,
        )
        self.call_logger = call_logger or OracleCallLogger()

    async def _score(self, case: QueryCase, coalition: CoalitionMask) -> tuple[float, int]:
        if case.target_response is None:
            raise DatasetError(
                f"case {case.case_id!r} has no target_response; generate it first",
                field="target_response",
            )
        prompt = build_prompt(case, coalition, self.config.prompt_template_id)
        with self.call_logger.call(
            "score",
            case_id=case.case_id,
            model_id=self.model_id,
            size=coalition.cardinality(),
            coalition=coalition.bits,
        ) as context:
            scored = await self.client.score(prompt, case.target_response)
            context["token_count"] = scored.token_count
        return scored.total, scored.token_count

    async def generate_target(self, case: QueryCase) -> QueryCase:
        if case.target_response is not None:
            return case
        prompt = build_prompt(case, case.full_mask(), self.config.prompt_template_id)
        with self.call_logger.call("generate", case_id=case.case_id, model_id=self.model_id):
            text = await self.client.generate(prompt, max_tokens=self.config.max_new_tokens)
        logger.info(
            f"generated target response for case {case.case_id}",
            extra={"case_id": case.case_id, "model_id": self.model_id, "chars": len(text)},
        )
        return replace(case, target_response=text)

    async def aclose(self) -> None:
        await self.client.aclose()


def create_oracle(
    config: OracleConfig,
    cache: UtilityCache | None = None,
    http_client: httpx.AsyncClient | None = None,
) -> UtilityOracle:
    """
    Build the oracle described by config.

    Raises:
        ConfigError: If a remote oracle lacks its endpoint or credential.
    """
    if config.kind is OracleKind.REMOTE_LLM:
        return RemoteLLMOracle(config, cache=cache, http_client=http_client)
    return SyntheticOracle(config, cache=cache)


# Oracles shared by the module-level helpers, one per configuration.
_oracle_registry: dict[OracleConfig, UtilityOracle] = {}


def get_oracle(config: OracleConfig) -> UtilityOracle:
    """Registered oracle for config, created on first use."""
    oracle = _oracle_registry.get(config)
    if oracle is None:
        oracle = create_oracle(config)
        _oracle_registry[config] = oracle
    return oracle


def clear_registry() -> None:
    """Forget registered oracles. Useful for testing."""
    _oracle_registry.clear()


async def utility(case: QueryCase, coalition: CoalitionMask, config: OracleConfig) -> UtilityRecord:
    """
    v(S) for coalition of case under the oracle described by config.

    Example:
        ```python
        record = await utility(case, CoalitionMask.from_indices([0, 2], 3), OracleConfig())
        record.value  # 4.0 for weights (1, 2, 3)
        ```
    """
    return await get_oracle(config).utility(case, coalition)


async def generate_target_response(case: QueryCase, config: OracleConfig) -> QueryCase:
    """
    Case carrying R_target, decoded greedily from the query and every document.

    A case that already has a target is returned unchanged without any call.

    Raises:
        OracleCapabilityError: For synthetic oracles.
    """
    if case.target_response is not None:
        return case
    return await get_oracle(config).generate_target(case)
