"""
Utility cache with at-most-once evaluation.

Concurrent requests for the same (case_id, model_id, coalition) share one
in-flight evaluation; finished values are appended to a JSONL file so an
interrupted experiment resumes without paying for utilities again.
"""

import asyncio
import math
from collections.abc import Awaitable, Callable, Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple

from fastattribution.exceptions import DatasetError
from fastattribution.logging import get_logger
from fastattribution.storage import append_lines, dumps_line, iter_jsonl


logger = get_logger("cache")

CacheKey = tuple[str, str, int]


class CachedUtility(NamedTuple):
    """A stored utility value."""

    case_id: str
    model_id: str
    coalition_bits: int
    value: float
    token_count: int

    @property
    def key(self) -> CacheKey:
        return (self.case_id, self.model_id, self.coalition_bits)

    def to_record(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "model_id": self.model_id,
            "coalition_bits": str(self.coalition_bits),
            "value": self.value,
            "token_count": self.token_count,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any], line: int | None = None) -> "CachedUtility":
        try:
            value = float(record["value"])
            entry = cls(
                case_id=str(record["case_id"]),
                model_id=str(record["model_id"]),
                coalition_bits=int(str(record["coalition_bits"])),
                value=value,
                token_count=int(record["token_count"]),
            )
        except KeyError as exc:
            raise DatasetError(f"cache record missing {exc.args[0]!r}", line=line) from None
        except (TypeError, ValueError) as exc:
            raise DatasetError(f"invalid cache record: {exc}", line=line) from None
        if entry.coalition_bits < 0 or entry.token_count < 0 or not math.isfinite(value):
            raise DatasetError("invalid cache record values", line=line)
        return entry


@dataclass
class CacheStats:
    """Counters for one cache instance."""

    hits: int = 0
    misses: int = 0
    coalesced: int = 0
    loaded: int = 0
    corrupt_lines: list[tuple[int, str]] = field(default_factory=list)


class UtilityCache:
    """
    Memoizes utility values keyed by (case_id, model_id, coalition bits).

    Features:
        - At-most-once evaluation: a key being computed blocks duplicate requests
        - Optional append-only JSONL persistence, one record per line
        - Corrupt persisted lines are skipped and reported, never fatal

    Example:
        ```python
        cache = UtilityCache("runs/cache.jsonl")

        async def compute():
            return await scorer(prompt)  # -> (value, token_count)

        entry = await cache.get_or_compute(("q1", "mistral", 5), compute)
        entry.value, entry.token_count
        ```
    """

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self.stats = CacheStats()
        self._values: dict[CacheKey, CachedUtility] = {}
        self._pending: dict[CacheKey, asyncio.Future[CachedUtility]] = {}
        if self.path is not None and self.path.exists():
            self._load(self.path)

    def _load(self, path: Path) -> int:
        added = 0
        for line_number, record, error in iter_jsonl(path):
            if error is None and record is not None:
                try:
                    entry = CachedUtility.from_record(record, line=line_number)
                except DatasetError as exc:
                    error = str(exc)
                else:
                    if entry.key not in self._values:
                        self._values[entry.key] = entry
                        added += 1
                    continue
            self.stats.corrupt_lines.append((line_number, error or "unreadable"))
            logger.warning(
                f"skipping corrupt cache line {line_number}: {error}",
                extra={"path": str(path), "line": line_number},
            )
        self.stats.loaded += added
        return added

    def merge(self, path: str | Path) -> int:
        """Fold another cache file into this one; existing keys win. Returns records added."""
        before = set(self._values)
        added = self._load(Path(path))
        if self.path is not None and added:
            append_lines(
                self.path,
                (dumps_line(entry.to_record()) for key, entry in self._values.items() if key not in before),
            )
        return added

    def __len__(self) -> int:
        return len(self._values)

    def __contains__(self, key: object) -> bool:
        return key in self._values

    def get(self, key: CacheKey) -> CachedUtility | None:
        return self._values.get(key)

    def entries(self) -> Iterator[CachedUtility]:
        return iter(self._values.values())

    def put(self, entry: CachedUtility) -> None:
        if entry.key in self._values:
            return
        self._values[entry.key] = entry
        if self.path is not None:
            append_lines(self.path, [dumps_line(entry.to_record())])

    async def get_or_compute(
        self,
        key: CacheKey,
        compute: Callable[[], Awaitable[tuple[float, int]]],
    ) -> CachedUtility:
        """
        Return the cached entry for key, computing it at most once.

        Concurrent callers for a key under evaluation await the same future.
        A failed evaluation is not cached; the next caller retries it.
        """
        cached = self._values.get(key)
        if cached is not None:
            self.stats.hits += 1
            return cached

        pending = self._pending.get(key)
        if pending is not None:
            self.stats.coalesced += 1
            return await asyncio.shield(pending)

        future: asyncio.Future[CachedUtility] = asyncio.get_running_loop().create_future()
        self._pending[key] = future
        self.stats.misses += 1
        try:
            value, token_count = await compute()
            entry = CachedUtility(key[0], key[1], key[2], float(value), int(token_count))
            self.put(entry)
            future.set_result(entry)
            return entry
        except BaseException as exc:
            if not future.done():
                if isinstance(exc, asyncio.CancelledError):
                    future.cancel()
                else:
                    future.set_exception(exc)
                    future.exception()  # consumed: no "never retrieved" warning
            raise
        finally:
            self._pending.pop(key, None)
