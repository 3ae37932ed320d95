"""
Logging for fastattribution.

Library modules log through named loggers under ``fastmvc.attribution`` with
structured context in ``extra``; only the CLI installs handlers.
"""

import logging
import sys
import time
from collections.abc import Iterator
from contextlib import contextmanager
from typing import Any


ROOT_LOGGER = "fastmvc.attribution"

logger = logging.getLogger(ROOT_LOGGER)

DEFAULT_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def get_logger(component: str) -> logging.Logger:
    """Logger for one component, e.g. ``get_logger("oracle")``."""
    return logging.getLogger(f"{ROOT_LOGGER}.{component}")


def configure_logging(level: int | str = logging.INFO, fmt: str = DEFAULT_FORMAT) -> None:
    """
    Install a single stderr handler on the package logger.

    Calling it again replaces the handler instead of stacking a second one.
    """
    root = logging.getLogger(ROOT_LOGGER)
    for handler in list(root.handlers):
        if getattr(handler, "_fastattribution", False):
            root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(fmt))
    handler._fastattribution = True  # type: ignore[attr-defined]
    root.addHandler(handler)
    root.setLevel(level)


class OracleCallLogger:
    """
    Logs each remote oracle call as a request/response pair.

    Example:
        ```python
        call_logger = OracleCallLogger(log_level=logging.DEBUG)
        with call_logger.call("score", case_id="q1", model_id="m", size=3) as context:
            ...
            context["token_count"] = 12
        ```

    Log lines:
        ```
        → score case=q1 |S|=3
        ← ✓ score case=q1 |S|=3 41.20ms
        ```
    """

    def __init__(
        self,
        log_level: int = logging.DEBUG,
        custom_logger: logging.Logger | None = None,
    ) -> None:
        self.log_level = log_level
        self._logger = custom_logger or get_logger("oracle")

    @contextmanager
    def call(self, operation: str, **context: Any) -> Iterator[dict[str, Any]]:
        label = f"{operation} case={context.get('case_id')}"
        if "size" in context:
            label += f" |S|={context['size']}"
        log_context = {"operation": operation, **context}
        self._logger.log(self.log_level, f"→ {label}", extra=log_context)

        start_time = time.perf_counter()
        try:
            yield log_context
        except Exception as exc:
            log_context["elapsed_ms"] = round((time.perf_counter() - start_time) * 1000, 2)
            log_context["error"] = type(exc).__name__
            self._logger.log(
                self.log_level,
                f"← ✗ {label} {type(exc).__name__} {log_context['elapsed_ms']:.2f}ms",
                extra=log_context,
            )
            raise
        log_context["elapsed_ms"] = round((time.perf_counter() - start_time) * 1000, 2)
        self._logger.log(
            self.log_level, f"← ✓ {label} {log_context['elapsed_ms']:.2f}ms", extra=log_context
        )
