"""
Base utility oracle for fastattribution.

Provides the interface every v(S) implementation shares: cached,
concurrency-bounded evaluation of coalitions for one case.
"""

import asyncio
from abc import ABC, abstractmethod
from collections.abc import Sequence

from fastattribution.cache import UtilityCache
from fastattribution.coalition import CoalitionMask
from fastattribution.exceptions import BoundsError, OracleCapabilityError
from fastattribution.models import QueryCase, UtilityRecord


class UtilityOracle(ABC):
    """
    Abstract base class for utility oracles.

    Subclasses implement ``_score``; the base class adds the at-most-once
    cache, the ``max_parallel`` bound on concurrent evaluations and the
    count of evaluations actually performed.

    Attributes:
        model_id: Model identity used in cache keys.
        max_parallel: Maximum evaluations in flight at once.
        cache: Utility cache shared by every case this oracle scores.
        calls: Evaluations performed (cache misses that reached ``_score``).

    Example:
        ```python
        from fastattribution import UtilityOracle

        class ConstantOracle(UtilityOracle):
            kind = "constant"

            async def _score(self, case, coalition):
                return float(coalition.cardinality()), 0
        ```
    """

    kind: str = ""

    def __init__(
        self,
        model_id: str,
        max_parallel: int = 1,
        cache: UtilityCache | None = None,
    ) -> None:
        if max_parallel < 1:
            raise BoundsError(f"max_parallel must be at least 1, got {max_parallel}")
        self.model_id = model_id
        self.max_parallel = max_parallel
        self.cache = cache if cache is not None else UtilityCache()
        self.calls = 0
        self.scored_tokens = 0
        self._semaphore: asyncio.Semaphore | None = None
        self._semaphore_loop: asyncio.AbstractEventLoop | None = None

    def _slots(self) -> asyncio.Semaphore:
        # One semaphore per event loop; asyncio primitives bind to the loop that first waits.
        loop = asyncio.get_running_loop()
        if self._semaphore is None or self._semaphore_loop is not loop:
            self._semaphore = asyncio.Semaphore(self.max_parallel)
            self._semaphore_loop = loop
        return self._semaphore

    @abstractmethod
    async def _score(self, case: QueryCase, coalition: CoalitionMask) -> tuple[float, int]:
        """
        Evaluate v(S) for one coalition.

        This method must be implemented by all oracle subclasses.

        Returns:
            The utility value and the number of scored tokens.
        """

    async def utility(self, case: QueryCase, coalition: CoalitionMask) -> UtilityRecord:
        """
        Cached utility of coalition for case.

        Raises:
            BoundsError: If the mask width differs from the case's document count.
        """
        if coalition.n != case.n:
            raise BoundsError(
                f"mask width {coalition.n} does not match case {case.case_id!r} with {case.n} documents"
            )

        async def compute() -> tuple[float, int]:
            async with self._slots():
                value, token_count = await self._score(case, coalition)
            self.calls += 1
            self.scored_tokens += token_count
            return value, token_count

        entry = await self.cache.get_or_compute((case.case_id, self.model_id, coalition.bits), compute)
        return UtilityRecord(
            case_id=case.case_id,
            model_id=self.model_id,
            coalition=coalition,
            value=entry.value,
            token_count=entry.token_count,
        )

    async def evaluate_many(
        self,
        case: QueryCase,
        coalitions: Sequence[CoalitionMask],
        chunk_size: int = 4096,
    ) -> list[UtilityRecord]:
        """Utilities for coalitions, evaluated concurrently, returned in input order."""
        records: list[UtilityRecord] = []
        for start in range(0, len(coalitions), chunk_size):
            chunk = coalitions[start : start + chunk_size]
            records.extend(await asyncio.gather(*(self.utility(case, c) for c in chunk)))
        return records

    async def generate_target(self, case: QueryCase) -> QueryCase:
        """
        Case with R_target filled in.

        Raises:
            OracleCapabilityError: Unless the oracle can decode text.
        """
        if case.target_response is not None:
            return case
        raise OracleCapabilityError("generation requires remote oracle")

    async def aclose(self) -> None:
        """Release network resources, if any."""

    async def __aenter__(self) -> "UtilityOracle":
        return self

    async def __aexit__(self, *exc_info: object) -> None:
        await self.aclose()
