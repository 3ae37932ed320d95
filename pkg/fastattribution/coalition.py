"""
Coalitions of retrieved documents.

A coalition S ⊆ D is stored as an integer bit set indexed by document
position in the case, so mask arithmetic is plain integer arithmetic.
"""

import math
from collections.abc import Iterable, Iterator
from dataclasses import dataclass

from scipy.special import gammaln

from fastattribution.exceptions import BoundsError


MAX_PLAYERS = 30


def _check_players(n: int) -> None:
    if not 1 <= n <= MAX_PLAYERS:
        raise BoundsError(f"player count must be in [1, {MAX_PLAYERS}], got {n}")


@dataclass(frozen=True, slots=True)
class CoalitionMask:
    """
    Immutable bit set over documents 0..n-1.

    Attributes:
        bits: Integer whose bit i is set when document i is in the coalition.
        n: Player count (document count of the owning case).

    Example:
        ```python
        from fastattribution import CoalitionMask

        s = CoalitionMask.from_indices([0, 2], n=4)
        assert 2 in s and s.cardinality() == 2
        assert (~s).indices() == (1, 3)
        ```
    """

    bits: int
    n: int

    def __post_init__(self) -> None:
        _check_players(self.n)
        if self.bits < 0 or self.bits >> self.n:
            raise BoundsError(f"mask {self.bits} has bits outside 0..{self.n - 1}")

    @classmethod
    def empty(cls, n: int) -> "CoalitionMask":
        return cls(0, n)

    @classmethod
    def full(cls, n: int) -> "CoalitionMask":
        _check_players(n)
        return cls((1 << n) - 1, n)

    @classmethod
    def from_indices(cls, indices: Iterable[int], n: int) -> "CoalitionMask":
        bits = 0
        for i in indices:
            if not 0 <= i < n:
                raise BoundsError(f"document index {i} outside 0..{n - 1}")
            bits |= 1 << i
        return cls(bits, n)

    def cardinality(self) -> int:
        return self.bits.bit_count()

    def indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.n) if self.bits >> i & 1)

    def with_player(self, i: int) -> "CoalitionMask":
        self._check_index(i)
        return CoalitionMask(self.bits | 1 << i, self.n)

    def without_player(self, i: int) -> "CoalitionMask":
        self._check_index(i)
        return CoalitionMask(self.bits & ~(1 << i), self.n)

    def union(self, other: "CoalitionMask") -> "CoalitionMask":
        self._check_width(other)
        return CoalitionMask(self.bits | other.bits, self.n)

    def intersection(self, other: "CoalitionMask") -> "CoalitionMask":
        self._check_width(other)
        return CoalitionMask(self.bits & other.bits, self.n)

    def difference(self, other: "CoalitionMask") -> "CoalitionMask":
        self._check_width(other)
        return CoalitionMask(self.bits & ~other.bits, self.n)

    def complement(self) -> "CoalitionMask":
        return CoalitionMask(~self.bits & ((1 << self.n) - 1), self.n)

    def issubset(self, other: "CoalitionMask") -> bool:
        self._check_width(other)
        return self.bits & ~other.bits == 0

    __or__ = union
    __and__ = intersection
    __sub__ = difference
    __invert__ = complement

    def __contains__(self, i: object) -> bool:
        return isinstance(i, int) and 0 <= i < self.n and bool(self.bits >> i & 1)

    def __iter__(self) -> Iterator[int]:
        return iter(self.indices())

    def __len__(self) -> int:
        return self.cardinality()

    def __int__(self) -> int:
        return self.bits

    def _check_index(self, i: int) -> None:
        if not 0 <= i < self.n:
            raise BoundsError(f"document index {i} outside 0..{self.n - 1}")

    def _check_width(self, other: "CoalitionMask") -> None:
        if other.n != self.n:
            raise BoundsError(f"mask widths differ: {self.n} vs {other.n}")


def enumerate_coalitions(n: int) -> Iterator[CoalitionMask]:
    """
    Yield all 2^n coalitions in ascending integer order (empty first, full last).

    Raises:
        BoundsError: If n is outside [1, 30].
    """
    _check_players(n)
    for bits in range(1 << n):
        yield CoalitionMask(bits, n)


def iter_k_subset_bits(n: int, k: int) -> Iterator[int]:
    """Integer masks of cardinality k in ascending order (Gosper's hack)."""
    if k == 0:
        yield 0
        return
    bits = (1 << k) - 1
    limit = 1 << n
    while bits < limit:
        yield bits
        lowest = bits & -bits
        ripple = bits + lowest
        bits = (((ripple ^ bits) >> 2) // lowest) | ripple


def enumerate_k_subsets(n: int, k: int) -> Iterator[CoalitionMask]:
    """
    Yield every coalition of exactly k documents, each once, in ascending order.

    Raises:
        BoundsError: If n is outside [1, 30] or k is outside [0, n].
    """
    _check_players(n)
    if not 0 <= k <= n:
        raise BoundsError(f"subset size must be in [0, {n}], got {k}")
    for bits in iter_k_subset_bits(n, k):
        yield CoalitionMask(bits, n)


def shapley_weight(n: int, s: int) -> float:
    """
    Weight s!·(n−s−1)!/n! of a coalition of size s not containing the player.

    Computed from log-factorials so it stays finite for every supported n.

    Raises:
        BoundsError: If s is outside [0, n−1].
    """
    _check_players(n)
    if not 0 <= s <= n - 1:
        raise BoundsError(f"coalition size must be in [0, {n - 1}], got {s}")
    return math.exp(gammaln(s + 1) + gammaln(n - s) - gammaln(n + 1))
