"""
Domain types shared by oracles, estimators, experiments and the CLI.

All types are immutable after construction and safe to share between
concurrent tasks.
"""

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from fastattribution.coalition import MAX_PLAYERS, CoalitionMask
from fastattribution.exceptions import ConfigError, DatasetError
from fastattribution.games import GameSpec


class DocumentLabel(str, Enum):
    """Relevance class of a retrieved document."""

    RELEVANT = "relevant"
    HARD_NEGATIVE = "hard_negative"  # same topic, no answer
    SOFT_NEGATIVE = "soft_negative"  # off topic
    UNLABELED = "unlabeled"


class ScenarioTag(str, Enum):
    """Inter-document relation a case was built to exhibit."""

    NONE = "none"
    REDUNDANCY = "redundancy"
    COMPLEMENTARITY = "complementarity"
    SYNERGY = "synergy"


class AttributionMethod(str, Enum):
    """Attribution methods known to run_method."""

    SHAPLEY = "shapley"
    LOO = "loo"
    TMC = "tmc"
    BETA = "beta"
    KERNEL_SHAP = "kernel_shap"
    CONTEXT_CITE = "context_cite"


@dataclass(frozen=True)
class Document:
    """
    One retrieved document.

    Attributes:
        doc_id: Identifier unique within its case.
        text: Document body; never empty.
        label: Relevance class.
        extra: Unknown fields read from a case file, written back unchanged.
    """

    doc_id: str
    text: str
    label: DocumentLabel = DocumentLabel.UNLABELED
    extra: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if not self.text:
            raise DatasetError(f"document {self.doc_id!r} has empty text", field="text")

    def to_dict(self) -> dict[str, Any]:
        return {**self.extra, "id": self.doc_id, "text": self.text, "label": self.label.value}

    @classmethod
    def from_dict(cls, data: dict[str, Any], line: int | None = None) -> "Document":
        for key in ("id", "text"):
            if key not in data:
                raise DatasetError(f"document missing field {key!r}", line=line, field=key)
        try:
            label = DocumentLabel(data.get("label", DocumentLabel.UNLABELED.value))
        except ValueError:
            raise DatasetError(
                f"unknown document label {data.get('label')!r}", line=line, field="label"
            ) from None
        extra = {k: v for k, v in data.items() if k not in {"id", "text", "label"}}
        return cls(doc_id=str(data["id"]), text=str(data["text"]), label=label, extra=extra)


_CASE_FIELDS = {"id", "query", "documents", "target_response", "scenario", "positive_pair", "game"}


@dataclass(frozen=True)
class QueryCase:
    """
    One attribution instance: query, ordered documents and the response to explain.

    Document order is fixed; every prompt built for any coalition keeps it.

    Attributes:
        case_id: Identifier unique within a case file.
        query: The user question Q.
        documents: Retrieved documents D, in retrieval order.
        target_response: Fixed response R_target being attributed, if generated.
        scenario_tag: Inter-document relation the case exhibits.
        positive_pair: Indices (A, B) of the positive documents, A first.
        game: Synthetic cooperative game attached to the case, if any.
        extra: Unknown fields read from a case file, written back unchanged.
    """

    case_id: str
    query: str
    documents: tuple[Document, ...]
    target_response: str | None = None
    scenario_tag: ScenarioTag = ScenarioTag.NONE
    positive_pair: tuple[int, int] | None = None
    game: GameSpec | None = None
    extra: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "documents", tuple(self.documents))
        n = len(self.documents)
        if not 1 <= n <= MAX_PLAYERS:
            raise DatasetError(
                f"case {self.case_id!r} has {n} documents; expected 1..{MAX_PLAYERS}",
                field="documents",
            )
        if self.positive_pair is not None:
            a, b = (int(i) for i in self.positive_pair)
            if a == b or not (0 <= a < n and 0 <= b < n):
                raise DatasetError(
                    f"case {self.case_id!r}: positive_pair {self.positive_pair} invalid for {n} documents",
                    field="positive_pair",
                )
            object.__setattr__(self, "positive_pair", (a, b))
        if self.game is not None and self.game.n != n:
            raise DatasetError(
                f"case {self.case_id!r}: game has {self.game.n} players, case has {n} documents",
                field="game",
            )

    @property
    def n(self) -> int:
        return len(self.documents)

    def full_mask(self) -> CoalitionMask:
        return CoalitionMask.full(self.n)

    def labels(self) -> tuple[DocumentLabel, ...]:
        return tuple(d.label for d in self.documents)

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            **self.extra,
            "id": self.case_id,
            "query": self.query,
            "documents": [d.to_dict() for d in self.documents],
        }
        if self.target_response is not None:
            data["target_response"] = self.target_response
        if self.scenario_tag is not ScenarioTag.NONE:
            data["scenario"] = self.scenario_tag.value
        if self.positive_pair is not None:
            data["positive_pair"] = list(self.positive_pair)
        if self.game is not None:
            data["game"] = self.game.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any], line: int | None = None) -> "QueryCase":
        for key in ("id", "query", "documents"):
            if key not in data:
                raise DatasetError(f"case missing field {key!r}", line=line, field=key)
        if not isinstance(data["documents"], list):
            raise DatasetError("'documents' must be a list", line=line, field="documents")
        documents = tuple(Document.from_dict(d, line=line) for d in data["documents"])
        try:
            scenario = ScenarioTag(data.get("scenario") or ScenarioTag.NONE.value)
        except ValueError:
            raise DatasetError(
                f"unknown scenario {data.get('scenario')!r}", line=line, field="scenario"
            ) from None
        pair = data.get("positive_pair")
        if pair is not None and (not isinstance(pair, list | tuple) or len(pair) != 2):
            raise DatasetError("positive_pair must hold two indices", line=line, field="positive_pair")
        try:
            game = GameSpec.from_dict(data["game"]) if data.get("game") is not None else None
        except ConfigError as exc:
            raise DatasetError(str(exc), line=line, field="game") from None
        extra = {k: v for k, v in data.items() if k not in _CASE_FIELDS}
        try:
            return cls(
                case_id=str(data["id"]),
                query=str(data["query"]),
                documents=documents,
                target_response=data.get("target_response"),
                scenario_tag=scenario,
                positive_pair=tuple(pair) if pair is not None else None,
                game=game,
                extra=extra,
            )
        except DatasetError as exc:
            raise DatasetError(str(exc), line=line, field=exc.field) from None
        except (TypeError, ValueError) as exc:
            raise DatasetError(str(exc), line=line) from None


@dataclass(frozen=True)
class UtilityRecord:
    """
    One evaluated utility v(S).

    Attributes:
        case_id: Case the coalition belongs to.
        model_id: Oracle model that produced the value.
        coalition: The coalition S.
        value: Log-likelihood in nats for remote oracles; arbitrary for games.
        token_count: Number of scored target tokens (0 for synthetic games).
    """

    case_id: str
    model_id: str
    coalition: CoalitionMask
    value: float
    token_count: int = 0


@dataclass(frozen=True)
class AttributionVector:
    """
    Per-document attribution scores produced by one method run.

    Attributes:
        method: Method that produced the scores.
        scores: One score per document, in document order.
        budget: Oracle evaluations the method was allowed.
        oracle_calls: Distinct coalitions the run consumed.
        seed: Seed of the sampling plan (0 for deterministic methods).
        case_id: Case the scores explain.
        low_confidence: Set when the estimate is best effort (budget, rank, degeneracy).
        details: Method-specific metadata (chosen lambda, samples used, ...).
    """

    method: AttributionMethod
    scores: tuple[float, ...]
    budget: int
    oracle_calls: int
    seed: int
    case_id: str
    low_confidence: bool = False
    details: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))

    @property
    def n(self) -> int:
        return len(self.scores)

    def ranking(self) -> tuple[int, ...]:
        """Document indices by descending score; ties keep ascending index."""
        order = np.argsort(-np.asarray(self.scores, dtype=float), kind="stable")
        return tuple(int(i) for i in order)

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method.value,
            "case_id": self.case_id,
            "scores": list(self.scores),
            "budget": self.budget,
            "oracle_calls": self.oracle_calls,
            "seed": self.seed,
            "low_confidence": self.low_confidence,
            "details": self.details,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AttributionVector":
        return cls(
            method=AttributionMethod(data["method"]),
            scores=tuple(data["scores"]),
            budget=int(data["budget"]),
            oracle_calls=int(data["oracle_calls"]),
            seed=int(data["seed"]),
            case_id=str(data["case_id"]),
            low_confidence=bool(data.get("low_confidence", False)),
            details=dict(data.get("details", {})),
        )
