"""
Pytest configuration and fixtures for FastMVC Attribution tests.

This file contains shared fixtures used across all test modules.
"""

import re
from collections import Counter
from collections.abc import AsyncIterator, Callable, Sequence

import httpx
import pytest
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from fastattribution import (
    Document,
    GameKind,
    GameSpec,
    OracleConfig,
    QueryCase,
    RemoteLLMOracle,
    SyntheticOracle,
)
from fastattribution.oracles import clear_registry


# Configure pytest-asyncio
pytest_plugins = ("pytest_asyncio",)

SCORER_URL = "http://scorer"


# ============================================================================
# Synthetic Game Fixtures
# ============================================================================


@pytest.fixture
def make_game_case() -> Callable[..., QueryCase]:
    """Factory for cases carrying a synthetic game."""

    def factory(
        weights: Sequence[float],
        kind: GameKind | str = GameKind.ADDITIVE,
        pair: tuple[int, int] | None = None,
        pair_value: float = 1.0,
        noise_sigma: float = 0.0,
        noise_seed: int = 0,
        case_id: str = "q1",
    ) -> QueryCase:
        game = GameSpec(GameKind(kind), len(weights), tuple(weights), pair, pair_value, noise_sigma, noise_seed)
        documents = tuple(Document(f"d{i}", f"document {i}") for i in range(len(weights)))
        return QueryCase(case_id=case_id, query="synthetic query", documents=documents, game=game)

    return factory


@pytest.fixture
def additive_case(make_game_case) -> QueryCase:
    """Three documents with weights (1, 2, 3)."""
    return make_game_case([1.0, 2.0, 3.0])


@pytest.fixture
def synthetic_oracle() -> SyntheticOracle:
    """In-memory synthetic oracle."""
    return SyntheticOracle()


@pytest.fixture(autouse=True)
def _reset_oracle_registry():
    yield
    clear_registry()


# ============================================================================
# Mock Scoring Endpoint
# ============================================================================


def mock_logprob(prompt: str, token: str) -> float:
    """Log-probability of token: rises with the token's occurrences in the prompt."""
    return -2.0 / (1 + prompt.count(token))


def create_scorer_app() -> FastAPI:
    """
    In-process scoring endpoint speaking both the native and the OpenAI echo schema.

    ``app.state.calls`` counts requests per route; status codes queued in
    ``app.state.failures`` are answered before the next real response.
    """
    app = FastAPI()
    app.state.calls = Counter()
    app.state.failures = []
    app.state.generated_text = " Paris"

    def injected_failure(request: Request) -> JSONResponse | None:
        if request.app.state.failures:
            status = request.app.state.failures.pop(0)
            headers = {"Retry-After": "0"} if status == 429 else None
            return JSONResponse({"error": f"injected {status}"}, status_code=status, headers=headers)
        return None

    @app.post("/score")
    async def score(request: Request):
        request.app.state.calls["score"] += 1
        failure = injected_failure(request)
        if failure is not None:
            return failure
        body = await request.json()
        tokens = body["continuation"].split()
        return {"tokens": tokens, "logprobs": [mock_logprob(body["prompt"], t) for t in tokens]}

    @app.post("/generate")
    async def generate(request: Request):
        request.app.state.calls["generate"] += 1
        failure = injected_failure(request)
        if failure is not None:
            return failure
        return {"text": request.app.state.generated_text}

    @app.post("/completions")
    async def completions(request: Request):
        request.app.state.calls["completions"] += 1
        failure = injected_failure(request)
        if failure is not None:
            return failure
        body = await request.json()
        if not body.get("echo"):
            return {"choices": [{"text": request.app.state.generated_text}]}
        text = body["prompt"]
        matches = list(re.finditer(r"\S+", text))
        tokens = [m.group() for m in matches]
        offsets = [m.start() for m in matches]
        # the scored prompt is everything before the final whitespace-separated token
        prefix = text[: offsets[-1]] if offsets else text
        logprobs = [None] + [mock_logprob(prefix, t) for t in tokens[1:]]
        return {
            "choices": [
                {"text": text, "logprobs": {"tokens": tokens, "token_logprobs": logprobs, "text_offset": offsets}}
            ]
        }

    return app


@pytest.fixture
def scorer_app() -> FastAPI:
    return create_scorer_app()


@pytest.fixture
async def scorer_client(scorer_app: FastAPI) -> AsyncIterator[httpx.AsyncClient]:
    """httpx client routed into the in-process scoring app."""
    client = httpx.AsyncClient(transport=httpx.ASGITransport(app=scorer_app), base_url=SCORER_URL)
    yield client
    await client.aclose()


@pytest.fixture
def remote_config() -> OracleConfig:
    """Remote oracle config for the mock endpoint; no credential, no backoff delay."""
    return OracleConfig(
        kind="remote_llm",
        model_id="mock-lm",
        endpoint_url=SCORER_URL,
        require_api_key=False,
        backoff_base=0.0,
        max_parallel=4,
    )


@pytest.fixture
async def remote_oracle(remote_config, scorer_client) -> AsyncIterator[RemoteLLMOracle]:
    oracle = RemoteLLMOracle(remote_config, http_client=scorer_client)
    yield oracle
    await oracle.aclose()


@pytest.fixture
def text_case() -> QueryCase:
    """
    Three documents: two mention the answer, one is unrelated.

    Under the mock scorer v(S) depends only on how many of d0, d1 are present.
    """
    return QueryCase(
        case_id="paris",
        query="What is the capital of France?",
        documents=(
            Document("d0", "Paris is the capital of France."),
            Document("d1", "The Seine flows through Paris."),
            Document("d2", "Bananas are yellow."),
        ),
        target_response="Paris",
    )
