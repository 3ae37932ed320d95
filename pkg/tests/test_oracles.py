"""
Tests for utility oracles.
"""

import asyncio
from dataclasses import replace

import pytest

from fastattribution import (
    BoundsError,
    CoalitionMask,
    ConfigError,
    DatasetError,
    OracleCapabilityError,
    OracleConfig,
    OracleKind,
    RemoteLLMOracle,
    SyntheticOracle,
    UtilityCache,
    UtilityOracle,
    create_oracle,
    generate_target_response,
    utility,
)
from fastattribution.oracles import get_oracle


class TestOracleConfig:
    """Tests for OracleConfig validation."""

    def test_defaults_are_synthetic(self):
        config = OracleConfig()

        assert config.kind is OracleKind.SYNTHETIC
        assert config.prompt_template_id == "default"

    def test_kind_from_string(self):
        assert OracleConfig(kind="remote_llm", endpoint_url="http://x").kind is OracleKind.REMOTE_LLM

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            OracleConfig(kind="local_gpu")

    def test_unknown_template(self):
        with pytest.raises(ConfigError):
            OracleConfig(prompt_template_id="chatty")

    def test_remote_requires_endpoint(self):
        with pytest.raises(ConfigError):
            OracleConfig(kind="remote_llm")

    def test_missing_credential(self, monkeypatch):
        monkeypatch.delenv("FASTATTRIBUTION_API_KEY", raising=False)
        config = OracleConfig(kind="remote_llm", endpoint_url="http://x")

        with pytest.raises(ConfigError, match="FASTATTRIBUTION_API_KEY"):
            config.api_key()

    def test_credential_from_environment(self, monkeypatch):
        monkeypatch.setenv("MY_KEY", "s3cret")
        config = OracleConfig(kind="remote_llm", endpoint_url="http://x", api_key_env="MY_KEY")

        assert config.api_key() == "s3cret"
        assert "s3cret" not in repr(config)

    def test_hashable(self):
        assert OracleConfig() == OracleConfig()
        assert hash(OracleConfig()) == hash(OracleConfig())


class TestSyntheticOracle:
    """Tests for SyntheticOracle."""

    async def test_reads_case_game(self, additive_case, synthetic_oracle):
        record = await synthetic_oracle.utility(additive_case, CoalitionMask.from_indices([0, 2], 3))

        assert record.value == 4.0
        assert record.token_count == 0
        assert record.model_id == "synthetic"

    async def test_empty_coalition_is_valid(self, additive_case, synthetic_oracle):
        record = await synthetic_oracle.utility(additive_case, CoalitionMask.empty(3))

        assert record.value == 0.0

    async def test_cache_prevents_reevaluation(self, additive_case, synthetic_oracle):
        mask = CoalitionMask.full(3)
        await synthetic_oracle.utility(additive_case, mask)
        await synthetic_oracle.utility(additive_case, mask)

        assert synthetic_oracle.calls == 1

    async def test_width_mismatch(self, additive_case, synthetic_oracle):
        with pytest.raises(BoundsError):
            await synthetic_oracle.utility(additive_case, CoalitionMask.full(4))

    async def test_case_without_game(self, text_case, synthetic_oracle):
        with pytest.raises(DatasetError):
            await synthetic_oracle.utility(text_case, CoalitionMask.full(3))

    async def test_cannot_generate(self, text_case, synthetic_oracle):
        unanswered = replace(text_case, target_response=None)

        with pytest.raises(OracleCapabilityError, match="generation requires remote oracle"):
            await synthetic_oracle.generate_target(unanswered)

    async def test_evaluate_many_keeps_order(self, additive_case, synthetic_oracle):
        masks = [CoalitionMask(b, 3) for b in (7, 0, 4, 1)]

        records = await synthetic_oracle.evaluate_many(additive_case, masks, chunk_size=2)

        assert [r.value for r in records] == [6.0, 0.0, 3.0, 1.0]

    async def test_persistent_cache_survives_restart(self, additive_case, tmp_path):
        path = tmp_path / "cache.jsonl"
        first = SyntheticOracle(OracleConfig(cache_path=str(path)))
        await first.evaluate_many(additive_case, [CoalitionMask(b, 3) for b in range(8)])

        second = SyntheticOracle(OracleConfig(cache_path=str(path)))
        await second.evaluate_many(additive_case, [CoalitionMask(b, 3) for b in range(8)])

        assert first.calls == 8
        assert second.calls == 0


class TestMaxParallel:
    """Tests for the concurrency bound."""

    async def test_in_flight_evaluations_are_bounded(self, additive_case):
        class TrackingOracle(UtilityOracle):
            kind = "tracking"

            def __init__(self):
                super().__init__("tracking", max_parallel=2)
                self.in_flight = 0
                self.peak = 0

            async def _score(self, case, coalition):
                self.in_flight += 1
                self.peak = max(self.peak, self.in_flight)
                await asyncio.sleep(0.001)
                self.in_flight -= 1
                return float(coalition.bits), 0

        oracle = TrackingOracle()
        await oracle.evaluate_many(additive_case, [CoalitionMask(b, 3) for b in range(8)])

        assert oracle.peak == 2
        assert oracle.calls == 8

    def test_invalid_max_parallel(self):
        class ConstantOracle(UtilityOracle):
            async def _score(self, case, coalition):
                return 1.0, 0

        with pytest.raises(BoundsError):
            ConstantOracle("constant", max_parallel=0)

    def test_shared_cache(self):
        cache = UtilityCache()

        assert SyntheticOracle(cache=cache).cache is cache


class TestRemoteLLMOracle:
    """Tests for RemoteLLMOracle against the mock endpoint."""

    async def test_utility_is_target_loglikelihood(self, remote_oracle, text_case):
        """Each document mentioning the answer raises its log-probability."""
        values = {
            bits: (await remote_oracle.utility(text_case, CoalitionMask(bits, 3))).value
            for bits in (0b000, 0b001, 0b011, 0b100)
        }

        assert values[0b000] == pytest.approx(-2.0)
        assert values[0b001] == pytest.approx(-1.0)
        assert values[0b011] == pytest.approx(-2.0 / 3.0)
        assert values[0b100] == pytest.approx(-2.0)

    async def test_at_most_once_per_coalition(self, remote_oracle, text_case, scorer_app):
        masks = [CoalitionMask(b, 3) for b in range(8)] * 3

        await remote_oracle.evaluate_many(text_case, masks)

        assert scorer_app.state.calls["score"] == 8
        assert remote_oracle.calls == 8
        assert remote_oracle.scored_tokens == 8

    async def test_requires_target_response(self, remote_oracle, text_case):
        with pytest.raises(DatasetError):
            await remote_oracle.utility(replace(text_case, target_response=None), CoalitionMask.full(3))

    async def test_generate_target(self, remote_oracle, text_case, scorer_app):
        generated = await remote_oracle.generate_target(replace(text_case, target_response=None))

        assert generated.target_response == " Paris"
        assert scorer_app.state.calls["generate"] == 1

    async def test_existing_target_is_kept(self, remote_oracle, text_case, scorer_app):
        assert await remote_oracle.generate_target(text_case) is text_case
        assert scorer_app.state.calls["generate"] == 0

    async def test_openai_adapter_agrees_with_native(self, remote_config, scorer_client, text_case):
        native = RemoteLLMOracle(remote_config, http_client=scorer_client)
        echo = RemoteLLMOracle(replace(remote_config, adapter="openai"), http_client=scorer_client)
        case = replace(text_case, target_response=" Paris")

        for bits in range(8):
            mask = CoalitionMask(bits, 3)
            assert (await echo.utility(case, mask)).value == pytest.approx(
                (await native.utility(case, mask)).value
            )

    def test_requires_remote_config(self):
        with pytest.raises(ConfigError):
            RemoteLLMOracle(OracleConfig())


class TestModuleHelpers:
    """Tests for create_oracle, utility and generate_target_response."""

    def test_create_oracle_kinds(self, remote_config, scorer_client):
        assert isinstance(create_oracle(OracleConfig()), SyntheticOracle)
        assert isinstance(create_oracle(remote_config, http_client=scorer_client), RemoteLLMOracle)

    def test_registry_reuses_oracles(self):
        config = OracleConfig(model_id="registry-test")

        assert get_oracle(config) is get_oracle(config)

    async def test_utility_helper(self, additive_case):
        record = await utility(additive_case, CoalitionMask.from_indices([1], 3), OracleConfig())

        assert record.value == 2.0

    async def test_generate_target_response_returns_existing(self, text_case):
        assert await generate_target_response(text_case, OracleConfig()) is text_case

    async def test_generate_target_response_synthetic(self, text_case):
        with pytest.raises(OracleCapabilityError):
            await generate_target_response(replace(text_case, target_response=None), OracleConfig())
