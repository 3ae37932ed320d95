"""
HTTP client for log-probability scoring endpoints.

Internally a scoring request is ``{"model", "prompt", "continuation"}`` and the
answer is ``{"tokens": [...], "logprobs": [...]}`` covering exactly the
continuation. Adapters translate that contract to concrete provider schemas.
"""

import asyncio
import math
from abc import ABC, abstractmethod
from collections.abc import Awaitable, Callable
from dataclasses import dataclass, field
from typing import Any

import httpx

from fastattribution.exceptions import (
    ConfigError,
    InputTooLongError,
    OracleCapabilityError,
    OracleTransportError,
)
from fastattribution.logging import get_logger


logger = get_logger("scoring")

_TOO_LONG_MARKERS = ("context length", "context_length", "too long", "maximum context", "too many tokens")


@dataclass(frozen=True)
class ScoredContinuation:
    """Per-token log-probabilities of a teacher-forced continuation."""

    tokens: tuple[str, ...]
    logprobs: tuple[float, ...]

    @property
    def total(self) -> float:
        return math.fsum(self.logprobs)

    @property
    def token_count(self) -> int:
        return len(self.tokens)


@dataclass
class RetryConfig:
    """
    Retry policy for transient scoring failures.

    Attributes:
        max_retries: Retries after the first attempt.
        backoff_base: Delay before the first retry, in seconds; doubles per retry.
        backoff_cap: Upper bound on any single delay, including Retry-After values.
        retry_status_codes: HTTP statuses treated as transient.

    Example:
        ```python
        from fastattribution import RetryConfig

        retry = RetryConfig(max_retries=5, backoff_base=1.0, backoff_cap=30.0)
        ```
    """

    max_retries: int = 4
    backoff_base: float = 0.5
    backoff_cap: float = 16.0
    retry_status_codes: set[int] = field(default_factory=lambda: {408, 429, 500, 502, 503, 504})

    def delay(self, attempt: int, retry_after: str | None = None) -> float:
        """Delay before retry number attempt (0-based)."""
        if retry_after is not None:
            try:
                return min(self.backoff_cap, max(0.0, float(retry_after)))
            except ValueError:
                pass
        return min(self.backoff_cap, self.backoff_base * 2**attempt)


class ScoringAdapter(ABC):
    """Maps the internal scoring and generation contract onto one provider schema."""

    name: str = ""

    @abstractmethod
    def score_request(self, model: str, prompt: str, continuation: str) -> tuple[str, dict[str, Any]]:
        """Return (path, JSON payload) for scoring continuation after prompt."""

    @abstractmethod
    def parse_score(self, data: dict[str, Any], prompt: str, continuation: str) -> ScoredContinuation:
        """Extract per-token log-probabilities of the continuation."""

    @abstractmethod
    def generate_request(self, model: str, prompt: str, max_tokens: int) -> tuple[str, dict[str, Any]]:
        """Return (path, JSON payload) for greedy generation."""

    @abstractmethod
    def parse_generation(self, data: dict[str, Any]) -> str:
        """Extract the generated text."""


def _checked(tokens: Any, logprobs: Any) -> ScoredContinuation:
    if not isinstance(tokens, list) or not isinstance(logprobs, list):
        raise OracleCapabilityError("endpoint did not return per-token log-probabilities")
    if len(tokens) != len(logprobs):
        raise OracleCapabilityError(
            f"endpoint returned {len(tokens)} tokens but {len(logprobs)} log-probabilities"
        )
    if any(lp is None for lp in logprobs):
        raise OracleCapabilityError("endpoint returned null log-probabilities for target tokens")
    return ScoredContinuation(tuple(str(t) for t in tokens), tuple(float(lp) for lp in logprobs))


class NativeAdapter(ScoringAdapter):
    """The internal contract spoken directly: ``POST /score`` and ``POST /generate``."""

    name = "native"

    def score_request(self, model, prompt, continuation):
        return "/score", {"model": model, "prompt": prompt, "continuation": continuation}

    def parse_score(self, data, prompt, continuation):
        return _checked(data.get("tokens"), data.get("logprobs"))

    def generate_request(self, model, prompt, max_tokens):
        return "/generate", {
            "model": model,
            "prompt": prompt,
            "max_tokens": max_tokens,
            "temperature": 0.0,
        }

    def parse_generation(self, data):
        text = data.get("text")
        if not isinstance(text, str):
            raise OracleCapabilityError("generation response has no 'text' field")
        return text


class OpenAIEchoAdapter(ScoringAdapter):
    """
    OpenAI-compatible legacy completions with ``echo``.

    The prompt and continuation are sent together with ``max_tokens=0``; the
    echoed token log-probabilities whose text offsets fall inside the
    continuation are kept.
    """

    name = "openai"

    def score_request(self, model, prompt, continuation):
        return "/completions", {
            "model": model,
            "prompt": prompt + continuation,
            "max_tokens": 0,
            "echo": True,
            "logprobs": 0,
            "temperature": 0.0,
        }

    def parse_score(self, data, prompt, continuation):
        try:
            logprobs = data["choices"][0]["logprobs"]
            tokens = logprobs["tokens"]
            token_logprobs = logprobs["token_logprobs"]
            offsets = logprobs["text_offset"]
        except (KeyError, IndexError, TypeError):
            raise OracleCapabilityError("completion response lacks echoed token log-probabilities") from None
        if not (len(tokens) == len(token_logprobs) == len(offsets)):
            raise OracleCapabilityError("completion response has misaligned logprob arrays")
        start = len(prompt)
        keep = [i for i, offset in enumerate(offsets) if offset >= start]
        if continuation and not keep:
            raise OracleCapabilityError("echoed tokens do not cover the continuation")
        return _checked([tokens[i] for i in keep], [token_logprobs[i] for i in keep])

    def generate_request(self, model, prompt, max_tokens):
        return "/completions", {
            "model": model,
            "prompt": prompt,
            "max_tokens": max_tokens,
            "temperature": 0.0,
        }

    def parse_generation(self, data):
        try:
            return str(data["choices"][0]["text"])
        except (KeyError, IndexError, TypeError):
            raise OracleCapabilityError("completion response has no generated text") from None


ADAPTERS: dict[str, type[ScoringAdapter]] = {
    NativeAdapter.name: NativeAdapter,
    OpenAIEchoAdapter.name: OpenAIEchoAdapter,
}


def get_adapter(name: str) -> ScoringAdapter:
    try:
        return ADAPTERS[name]()
    except KeyError:
        raise ConfigError(f"unknown scoring adapter {name!r} (known: {', '.join(sorted(ADAPTERS))})") from None


class ScoringClient:
    """
    Async client for a log-probability scoring endpoint.

    Features:
        - Pluggable provider adapters
        - Exponential backoff on transport errors, timeouts, 429 and 5xx
        - Retry-After honoured up to the backoff cap
        - Bearer credential attached per request, never logged

    Example:
        ```python
        async with ScoringClient("http://localhost:8000", "mistral-7b") as client:
            scored = await client.score("Question: ...\\nAnswer:", " Paris.")
            scored.total  # sum of token log-probabilities
        ```
    """

    def __init__(
        self,
        endpoint_url: str,
        model_id: str,
        adapter: str | ScoringAdapter = "native",
        api_key: str | None = None,
        timeout: float = 60.0,
        retry: RetryConfig | None = None,
        client: httpx.AsyncClient | None = None,
        sleep: Callable[[float], Awaitable[None]] = asyncio.sleep,
    ) -> None:
        if not endpoint_url:
            raise ConfigError("scoring client requires an endpoint URL")
        self.endpoint_url = endpoint_url.rstrip("/")
        self.model_id = model_id
        self.adapter = get_adapter(adapter) if isinstance(adapter, str) else adapter
        self.retry = retry or RetryConfig()
        self._api_key = api_key
        self._owns_client = client is None
        self._client = client or httpx.AsyncClient(timeout=timeout)
        self._sleep = sleep

    async def __aenter__(self) -> "ScoringClient":
        return self

    async def __aexit__(self, *exc_info: object) -> None:
        await self.aclose()

    async def aclose(self) -> None:
        if self._owns_client:
            await self._client.aclose()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        return headers

    async def score(self, prompt: str, continuation: str) -> ScoredContinuation:
        """Teacher-forced log-probabilities of continuation given prompt."""
        path, payload = self.adapter.score_request(self.model_id, prompt, continuation)
        data = await self._post(path, payload)
        return self.adapter.parse_score(data, prompt, continuation)

    async def generate(self, prompt: str, max_tokens: int = 256) -> str:
        """Greedy (temperature 0) completion of prompt."""
        path, payload = self.adapter.generate_request(self.model_id, prompt, max_tokens)
        data = await self._post(path, payload)
        return self.adapter.parse_generation(data)

    async def _post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        url = f"{self.endpoint_url}{path}"
        last_status: int | None = None
        last_error = "no attempt made"
        attempts = self.retry.max_retries + 1

        for attempt in range(attempts):
            retry_after: str | None = None
            try:
                response = await self._client.post(url, json=payload, headers=self._headers())
            except httpx.TimeoutException as exc:
                last_error = f"timeout: {exc}"
            except httpx.TransportError as exc:
                last_error = f"transport error: {exc}"
            else:
                last_status = response.status_code
                if response.status_code < 400:
                    try:
                        data = response.json()
                    except ValueError:
                        raise OracleCapabilityError(f"{url} returned a non-JSON body") from None
                    if not isinstance(data, dict):
                        raise OracleCapabilityError(f"{url} returned a non-object JSON body")
                    return data
                self._raise_for_fatal(response)
                last_error = f"HTTP {response.status_code}"
                retry_after = response.headers.get("Retry-After")

            if attempt + 1 < attempts:
                delay = self.retry.delay(attempt, retry_after)
                logger.warning(
                    f"scoring call failed ({last_error}); retry {attempt + 1}/{self.retry.max_retries} in {delay:.2f}s",
                    extra={"url": url, "attempt": attempt + 1, "status_code": last_status},
                )
                await self._sleep(delay)

        raise OracleTransportError(
            f"{url} failed after {attempts} attempts: {last_error}",
            status_code=last_status,
            attempts=attempts,
        )

    def _raise_for_fatal(self, response: httpx.Response) -> None:
        status = response.status_code
        if status in self.retry.retry_status_codes:
            return
        body = response.text[:500]
        if status == 413 or (status in {400, 422} and any(m in body.lower() for m in _TOO_LONG_MARKERS)):
            raise InputTooLongError(f"prompt exceeds the model context window: {body}")
        if status in {401, 403}:
            raise OracleCapabilityError(f"endpoint rejected the credential (HTTP {status})")
        raise OracleCapabilityError(f"endpoint rejected the request (HTTP {status}): {body}")
