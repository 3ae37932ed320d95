"""
Tests for prompt construction.
"""

import pytest

from fastattribution import BoundsError, CoalitionMask, ConfigError, build_prompt


class TestBuildPrompt:
    """Tests for build_prompt."""

    def test_documents_keep_original_order_and_ordinals(self, text_case):
        """A subset keeps retrieval order and each document its full-list ordinal."""
        prompt = build_prompt(text_case, CoalitionMask.from_indices([2, 0], 3))

        assert "[Document 1]\nParis is the capital of France." in prompt
        assert "[Document 3]\nBananas are yellow." in prompt
        assert "[Document 2]" not in prompt
        assert prompt.index("[Document 1]") < prompt.index("[Document 3]")

    def test_empty_coalition_has_query_only(self, text_case):
        prompt = build_prompt(text_case, CoalitionMask.empty(3))

        assert "[Document" not in prompt
        assert prompt.endswith("Question: What is the capital of France?\nAnswer:")

    def test_deterministic(self, text_case):
        mask = CoalitionMask.from_indices([1], 3)

        assert build_prompt(text_case, mask) == build_prompt(text_case, mask)

    def test_context_only_template(self, text_case):
        prompt = build_prompt(text_case, CoalitionMask.full(3), "context-only")

        assert "### Document 2" in prompt
        assert prompt.endswith("### Answer\n")

    def test_unknown_template(self, text_case):
        with pytest.raises(ConfigError):
            build_prompt(text_case, CoalitionMask.full(3), "chatty")

    def test_mask_width_mismatch(self, text_case):
        with pytest.raises(BoundsError):
            build_prompt(text_case, CoalitionMask.full(4))
