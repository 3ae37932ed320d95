"""
Synthetic cooperative games with closed-form structure.

Games stand in for the language-model utility when checking estimators:
their Shapley values are known, and each scenario kind reproduces one
inter-document relation between a positive pair (A, B).
"""

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any

import numpy as np

from fastattribution.coalition import CoalitionMask
from fastattribution.exceptions import BoundsError, ConfigError


_KEY_MASK = (1 << 128) - 1


class GameKind(str, Enum):
    """Scenario term added on top of the additive background."""

    ADDITIVE = "additive"
    REDUNDANCY = "redundancy"  # A or B suffices
    COMPLEMENTARITY = "complementarity"  # A and B each give half
    SYNERGY = "synergy"  # only A and B together


@dataclass(frozen=True)
class GameSpec:
    """
    Parametric synthetic game.

    v(S) = Σ_{i∈S} weights[i] + scenario term + noise, where the noise is a
    Gaussian draw keyed on (noise_seed, S) so every coalition keeps one value
    regardless of evaluation order.

    Attributes:
        kind: Scenario term.
        n: Player count.
        weights: Background per-player values; zero for the pair in non-additive kinds.
        pair: Positive pair (a, b); ignored for additive games.
        pair_value: Value r carried by the pair term.
        noise_sigma: Standard deviation of the per-coalition noise.
        noise_seed: Key of the counter-based noise generator.

    Example:
        ```python
        from fastattribution import CoalitionMask, GameKind, GameSpec, synthetic_utility

        game = GameSpec(GameKind.SYNERGY, n=3, weights=(0.0, 0.0, 0.5), pair=(0, 1))
        synthetic_utility(game, CoalitionMask.from_indices([0, 1], 3))  # 1.0
        ```
    """

    kind: GameKind
    n: int
    weights: tuple[float, ...]
    pair: tuple[int, int] | None = None
    pair_value: float = 1.0
    noise_sigma: float = 0.0
    noise_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", GameKind(self.kind))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.weights) != self.n:
            raise ConfigError(f"game has {len(self.weights)} weights for {self.n} players")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if self.kind is GameKind.ADDITIVE:
            return
        if self.pair is None:
            raise ConfigError(f"{self.kind.value} game requires a positive pair")
        a, b = (int(i) for i in self.pair)
        if a == b or not (0 <= a < self.n and 0 <= b < self.n):
            raise ConfigError(f"invalid pair {self.pair} for {self.n} players")
        object.__setattr__(self, "pair", (a, b))
        if self.weights[a] != 0.0 or self.weights[b] != 0.0:
            raise ConfigError("pair members must carry zero background weight")
        if self.pair_value <= 0:
            raise ConfigError("pair_value must be positive")

    def scaled(self, factor: float) -> "GameSpec":
        """Same game with every utility multiplied by factor."""
        return replace(
            self,
            weights=tuple(w * factor for w in self.weights),
            pair_value=self.pair_value * factor,
            noise_sigma=self.noise_sigma * abs(factor),
        )

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "kind": self.kind.value,
            "n": self.n,
            "weights": list(self.weights),
            "pair_value": self.pair_value,
            "noise_sigma": self.noise_sigma,
            "noise_seed": self.noise_seed,
        }
        if self.pair is not None:
            data["pair"] = list(self.pair)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GameSpec":
        try:
            return cls(
                kind=GameKind(data["kind"]),
                n=int(data["n"]),
                weights=tuple(data["weights"]),
                pair=tuple(data["pair"]) if data.get("pair") is not None else None,
                pair_value=float(data.get("pair_value", 1.0)),
                noise_sigma=float(data.get("noise_sigma", 0.0)),
                noise_seed=int(data.get("noise_seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid game spec: {exc}") from None


def coalition_noise(seed: int, bits: int) -> float:
    """Standard normal draw from a Philox stream keyed on seed, counter set by the mask."""
    generator = np.random.Generator(np.random.Philox(key=seed & _KEY_MASK, counter=bits << 192))
    return float(generator.standard_normal())


def scenario_term(spec: GameSpec, bits: int) -> float:
    if spec.kind is GameKind.ADDITIVE or spec.pair is None:
        return 0.0
    a, b = spec.pair
    has_a = bool(bits >> a & 1)
    has_b = bool(bits >> b & 1)
    if spec.kind is GameKind.REDUNDANCY:
        return spec.pair_value if has_a or has_b else 0.0
    if spec.kind is GameKind.COMPLEMENTARITY:
        return spec.pair_value / 2 * (has_a + has_b)
    return spec.pair_value if has_a and has_b else 0.0


def synthetic_utility(spec: GameSpec, coalition: CoalitionMask) -> float:
    """
    Value of a coalition in a synthetic game.

    Raises:
        BoundsError: If the mask width differs from the game's player count.
    """
    if coalition.n != spec.n:
        raise BoundsError(f"mask width {coalition.n} does not match game with {spec.n} players")
    bits = coalition.bits
    value = math.fsum(w for i, w in enumerate(spec.weights) if bits >> i & 1)
    value += scenario_term(spec, bits)
    if spec.noise_sigma > 0:
        value += spec.noise_sigma * coalition_noise(spec.noise_seed, bits)
    return value
