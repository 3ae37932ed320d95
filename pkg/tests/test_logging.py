"""
Tests for logging helpers.
"""

import logging

import pytest

from fastattribution import OracleCallLogger, configure_logging, get_logger
from fastattribution.logging import ROOT_LOGGER


class TestOracleCallLogger:
    """Tests for OracleCallLogger."""

    def test_logs_request_and_response(self, caplog):
        call_logger = OracleCallLogger(log_level=logging.INFO)

        with caplog.at_level(logging.INFO, logger=ROOT_LOGGER):
            with call_logger.call("score", case_id="q1", model_id="m", size=2) as context:
                context["token_count"] = 5

        messages = [r.getMessage() for r in caplog.records]
        assert messages[0] == "→ score case=q1 |S|=2"
        assert messages[1].startswith("← ✓ score case=q1 |S|=2")
        assert caplog.records[1].token_count == 5
        assert caplog.records[1].elapsed_ms >= 0

    def test_logs_failure_and_reraises(self, caplog):
        call_logger = OracleCallLogger(log_level=logging.INFO)

        with caplog.at_level(logging.INFO, logger=ROOT_LOGGER):
            with pytest.raises(RuntimeError):
                with call_logger.call("generate", case_id="q1"):
                    raise RuntimeError("boom")

        assert caplog.records[-1].getMessage().startswith("← ✗ generate case=q1 RuntimeError")
        assert caplog.records[-1].error == "RuntimeError"

    def test_custom_logger(self, caplog):
        custom_logger = logging.getLogger("custom.test.logger")
        call_logger = OracleCallLogger(log_level=logging.WARNING, custom_logger=custom_logger)

        with caplog.at_level(logging.WARNING, logger="custom.test.logger"):
            with call_logger.call("score", case_id="q2"):
                pass

        assert {r.name for r in caplog.records} == {"custom.test.logger"}


class TestConfigureLogging:
    """Tests for handler installation."""

    def test_component_loggers_are_namespaced(self):
        assert get_logger("oracle").name == "fastmvc.attribution.oracle"

    def test_configure_twice_installs_one_handler(self):
        root = logging.getLogger(ROOT_LOGGER)
        before = list(root.handlers)
        try:
            configure_logging("DEBUG")
            configure_logging("INFO")
            installed = [h for h in root.handlers if getattr(h, "_fastattribution", False)]

            assert len(installed) == 1
            assert root.level == logging.INFO
        finally:
            for handler in list(root.handlers):
                if handler not in before:
                    root.removeHandler(handler)
            root.setLevel(logging.NOTSET)
