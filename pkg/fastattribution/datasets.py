"""
Attribution case files and synthetic case generation.

Case files are UTF-8 JSONL, one case per line:

    {"id": "q1", "query": "...", "documents": [{"id": "d0", "text": "...", "label": "relevant"}],
     "target_response": "...", "scenario": "synergy", "positive_pair": [0, 1], "game": {...}}

Unknown fields are kept and written back on save.
"""

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fastattribution.exceptions import BoundsError, ConfigError, DatasetError
from fastattribution.games import GameKind, GameSpec, scenario_term
from fastattribution.logging import get_logger
from fastattribution.models import Document, DocumentLabel, QueryCase, ScenarioTag
from fastattribution.storage import atomic_write_text, dumps_line, iter_jsonl


logger = get_logger("datasets")


def load_cases(path: str | Path) -> list[QueryCase]:
    """
    Read a JSONL case file.

    Raises:
        DatasetError: If the file is missing, a line is malformed, or a case id repeats.
    """
    source = Path(path)
    if not source.is_file():
        raise DatasetError(f"case file not found: {source}")
    cases: list[QueryCase] = []
    seen: dict[str, int] = {}
    for line_number, record, error in iter_jsonl(source):
        if error is not None or record is None:
            raise DatasetError(error or "unreadable line", line=line_number)
        case = QueryCase.from_dict(record, line=line_number)
        if case.case_id in seen:
            raise DatasetError(
                f"duplicate case id {case.case_id!r} (first seen on line {seen[case.case_id]})",
                line=line_number,
                field="id",
            )
        seen[case.case_id] = line_number
        cases.append(case)
    logger.info(f"loaded {len(cases)} cases from {source}", extra={"path": str(source), "cases": len(cases)})
    return cases


def save_cases(cases: Iterable[QueryCase], path: str | Path) -> Path:
    """Write cases as JSONL, atomically."""
    text = "".join(dumps_line(case.to_dict()) + "\n" for case in cases)
    return atomic_write_text(path, text)


_SYLLABLES = (
    "ka", "lo", "mi", "ren", "sa", "tor", "vel", "zu", "an", "bri",
    "dor", "el", "fen", "gal", "hu", "ist", "jo", "ky", "lum", "mar",
    "nor", "pel", "qui", "ros", "sel", "tam", "ur", "vin", "wen", "yar",
)
_PLACE_SUFFIXES = ("ford", "mere", "holm", "gate", "ton", "vale")
_ARTIFACT_NOUNS = ("lantern", "codex", "compass", "chalice", "loom", "astrolabe", "bell", "map")
_EVENT_NOUNS = ("Festival", "Expedition", "Accord", "Games", "Voyage")


def _stem(a: int, b: int) -> str:
    return _SYLLABLES[a] + _SYLLABLES[b]


def build_lexicon(rng: np.random.Generator, size: int) -> dict[str, tuple[str, ...]]:
    """
    Invented entity names, ``size`` per category, unique within and across categories.

    Categories: person, place, artifact, event.
    """
    s = len(_SYLLABLES)
    spaces = {
        "person": (s * s, lambda k: _stem(k // s, k % s).capitalize()),
        "place": (
            s * s * len(_PLACE_SUFFIXES),
            lambda k: (_stem(k // len(_PLACE_SUFFIXES) // s, k // len(_PLACE_SUFFIXES) % s)
                       + _PLACE_SUFFIXES[k % len(_PLACE_SUFFIXES)]).capitalize(),
        ),
        "artifact": (
            s * s * len(_ARTIFACT_NOUNS),
            lambda k: _stem(k // len(_ARTIFACT_NOUNS) // s, k // len(_ARTIFACT_NOUNS) % s).capitalize()
            + " " + _ARTIFACT_NOUNS[k % len(_ARTIFACT_NOUNS)],
        ),
        "event": (
            s * s * len(_EVENT_NOUNS),
            lambda k: _stem(k // len(_EVENT_NOUNS) // s, k // len(_EVENT_NOUNS) % s).capitalize()
            + " " + _EVENT_NOUNS[k % len(_EVENT_NOUNS)],
        ),
    }
    lexicon: dict[str, tuple[str, ...]] = {}
    for category, (space, render) in spaces.items():
        if size > space:
            raise DatasetError(f"lexicon size {size} exceeds the {space} distinct {category} names available")
        picks = rng.choice(space, size=size, replace=False)
        lexicon[category] = tuple(render(int(k)) for k in picks)
    return lexicon


@dataclass(frozen=True)
class ScenarioFrames:
    """Text frames for one scenario kind; fields are filled with lexicon entries."""

    query: str
    positive_a: str
    positive_b: str
    answer: str
    answer_places: int


SCENARIO_FRAMES: dict[ScenarioTag, ScenarioFrames] = {
    ScenarioTag.REDUNDANCY: ScenarioFrames(
        query="Where did {person} hide the {artifact}?",
        positive_a="{person} hid the {artifact} in {place}, beneath the old granary.",
        positive_b="The {artifact} was hidden by {person} in {place}, under the floor of the old granary.",
        answer="{place}",
        answer_places=1,
    ),
    ScenarioTag.COMPLEMENTARITY: ScenarioFrames(
        query="Which two towns did {person} visit during the {event}?",
        positive_a="During the {event}, {person} first traveled to {place}.",
        positive_b="Later in the {event}, {person} also stopped in {place2}.",
        answer="{place} and {place2}",
        answer_places=2,
    ),
    ScenarioTag.SYNERGY: ScenarioFrames(
        query="In which town was the {artifact} made?",
        positive_a="The {artifact} was crafted by {person}.",
        positive_b="{person} spent their entire life working in {place}.",
        answer="{place}",
        answer_places=1,
    ),
}

NEGATIVE_FRAMES: tuple[str, ...] = (
    "{person} once traded wool in {other} before the harvest.",
    "Merchants in {other} claimed to have seen the {artifact}, but no record confirms it.",
    "The {event} drew visitors from {other} and the surrounding hills.",
    "Scholars in {other} have written about {person} for years.",
    "A replica of the {artifact} is on display in {other}.",
    "{person} received letters from a cousin living in {other}.",
    "Travelers to the {event} often rested in {other} on their way.",
)


@dataclass
class ScenarioTemplate:
    """
    Deterministic generator settings for one scenario family.

    Attributes:
        kind: Redundancy, complementarity or synergy.
        rng_seed: Seed for lexicon sampling and frame choice.
        lexicon_size: Entity names drawn per category.
        entity_lexicon: Explicit lexicon (person, place, artifact, event); built when None.
        sentence_frames: Frames for the positive pair; the kind's defaults when None.
        negative_frames: Frames for hard negatives.

    Example:
        ```python
        from fastattribution import ScenarioTemplate, generate_scenario_cases

        template = ScenarioTemplate(kind="synergy", rng_seed=7)
        cases = generate_scenario_cases(template, count=20, n_docs=10)  # 40 cases
        ```
    """

    kind: ScenarioTag
    rng_seed: int = 0
    lexicon_size: int = 64
    entity_lexicon: dict[str, tuple[str, ...]] | None = None
    sentence_frames: ScenarioFrames | None = None
    negative_frames: tuple[str, ...] = field(default=NEGATIVE_FRAMES)

    def __post_init__(self) -> None:
        try:
            self.kind = ScenarioTag(self.kind)
        except ValueError:
            raise ConfigError(f"unknown scenario kind {self.kind!r}") from None
        if self.kind is ScenarioTag.NONE:
            raise ConfigError("scenario template needs redundancy, complementarity or synergy")
        if self.lexicon_size < 1:
            raise ConfigError("lexicon_size must be positive")
        if self.sentence_frames is None:
            self.sentence_frames = SCENARIO_FRAMES[self.kind]
        if not self.negative_frames:
            raise ConfigError("at least one negative frame is required")


def generate_scenario_cases(
    template: ScenarioTemplate,
    count: int,
    n_docs: int = 10,
    positions: tuple[int, int] = (0, 1),
) -> list[QueryCase]:
    """
    Scenario cases in both positive-document orders.

    Each base case yields an ``-ab`` variant (A before B) and a ``-ba``
    variant with the two positives swapped; negatives and ids are otherwise
    identical. ``positive_pair`` always holds (index of A, index of B).

    Raises:
        BoundsError: If n_docs < 3 or positions are invalid.
        DatasetError: If the lexicon is too small for count cases.
    """
    if n_docs < 3:
        raise BoundsError(f"scenario cases need at least 3 documents, got {n_docs}")
    first, second = sorted(int(p) for p in positions)
    if first == second or first < 0 or second >= n_docs:
        raise BoundsError(f"invalid positive positions {positions} for {n_docs} documents")
    if count < 0:
        raise BoundsError("count must be non-negative")

    rng = np.random.default_rng(template.rng_seed)
    lexicon = template.entity_lexicon or build_lexicon(rng, template.lexicon_size)
    frames = template.sentence_frames or SCENARIO_FRAMES[template.kind]
    places = lexicon["place"]
    needed_places = count * frames.answer_places
    needed_other = max(count, 1)
    if needed_places + (n_docs - 2) > len(places) or any(
        len(lexicon[c]) < needed_other for c in ("person", "artifact", "event")
    ):
        raise DatasetError(
            f"lexicon exhausted: {count} {template.kind.value} cases need {needed_places} answer places "
            f"plus {n_docs - 2} distractors and {count} names per category; increase lexicon_size"
        )

    kind = template.kind.value
    cases: list[QueryCase] = []
    for i in range(count):
        answers = places[i * frames.answer_places : (i + 1) * frames.answer_places]
        slots = {
            "person": lexicon["person"][i],
            "artifact": lexicon["artifact"][i],
            "event": lexicon["event"][i],
            "place": answers[0],
            "place2": answers[-1],
        }
        distractors = [p for p in places if p not in answers]
        picks = rng.choice(len(distractors), size=n_docs - 2, replace=False)
        frame_picks = rng.integers(len(template.negative_frames), size=n_docs - 2)
        negatives = [
            Document(
                doc_id=f"neg-{j + 1}",
                text=template.negative_frames[int(f)].format(**slots, other=distractors[int(p)]),
                label=DocumentLabel.HARD_NEGATIVE,
            )
            for j, (p, f) in enumerate(zip(picks, frame_picks, strict=True))
        ]
        doc_a = Document("pos-a", frames.positive_a.format(**slots), DocumentLabel.RELEVANT)
        doc_b = Document("pos-b", frames.positive_b.format(**slots), DocumentLabel.RELEVANT)
        query = frames.query.format(**slots)
        answer = frames.answer.format(**slots)

        for order, (at_first, at_second) in (("ab", (doc_a, doc_b)), ("ba", (doc_b, doc_a))):
            remaining = iter(negatives)
            documents = [
                at_first if j == first else at_second if j == second else next(remaining)
                for j in range(n_docs)
            ]
            pair = (first, second) if order == "ab" else (second, first)
            cases.append(
                QueryCase(
                    case_id=f"{kind}-{i:03d}-{order}",
                    query=query,
                    documents=tuple(documents),
                    scenario_tag=template.kind,
                    positive_pair=pair,
                    extra={"answer": answer},
                )
            )
    return cases


def attach_synthetic_game(
    case: QueryCase,
    weights: Sequence[float] | None = None,
    pair_value: float = 1.0,
    noise_sigma: float = 0.0,
    noise_seed: int = 0,
) -> GameSpec:
    """
    Synthetic game matching a scenario case's tag and positive pair.

    Raises:
        DatasetError: If the case has no scenario tag or no positive pair.
    """
    if case.scenario_tag is ScenarioTag.NONE:
        raise DatasetError(f"case {case.case_id!r} has no scenario tag", field="scenario")
    if case.positive_pair is None:
        raise DatasetError(f"case {case.case_id!r} has no positive_pair", field="positive_pair")
    return GameSpec(
        kind=GameKind(case.scenario_tag.value),
        n=case.n,
        weights=tuple(weights) if weights is not None else (0.0,) * case.n,
        pair=case.positive_pair,
        pair_value=pair_value,
        noise_sigma=noise_sigma,
        noise_seed=noise_seed,
    )


def label_split(n: int) -> tuple[int, int, int]:
    """(relevant, hard negative, soft negative) counts in the 5/4/1 proportion, scaled to n."""
    soft = round(n * 0.1)
    relevant = max(min(2, n), round(n * 0.5))
    hard = max(0, n - relevant - soft)
    soft = n - relevant - hard
    return relevant, hard, soft


def generate_game_cases(
    count: int,
    n_docs: int = 10,
    seed: int = 0,
    kinds: Sequence[GameKind | str] = tuple(GameKind),
    pair_value: float = 4.0,
    relevant_range: tuple[float, float] = (1.0, 3.0),
    hard_range: tuple[float, float] = (0.2, 0.6),
    noise_fraction: float = 0.02,
) -> list[QueryCase]:
    """
    Retrieval-style cases carrying synthetic games.

    Documents follow a 5/4/1 relevant/hard/soft split scaled to n_docs, in
    random positions. Relevant documents weigh U(relevant_range), hard
    negatives U(hard_range), soft negatives 0. Kinds cycle through ``kinds``;
    non-additive cases put two relevant documents in a positive pair whose
    value flows only through the scenario term. Noise σ is noise_fraction of
    the noiseless |v(D)|.

    Raises:
        BoundsError: If n_docs is too small for a positive pair.
    """
    try:
        kinds = tuple(GameKind(k) for k in kinds)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not kinds:
        raise ConfigError("at least one game kind is required")
    if count < 0 or noise_fraction < 0:
        raise BoundsError("count and noise_fraction must be non-negative")
    relevant, hard, soft = label_split(n_docs)
    labels = (
        [DocumentLabel.RELEVANT] * relevant
        + [DocumentLabel.HARD_NEGATIVE] * hard
        + [DocumentLabel.SOFT_NEGATIVE] * soft
    )
    cases: list[QueryCase] = []
    for i in range(count):
        kind = kinds[i % len(kinds)]
        if kind is not GameKind.ADDITIVE and relevant < 2:
            raise BoundsError(f"{kind.value} games need at least 2 documents, got {n_docs}")
        rng = np.random.default_rng([seed, i])
        placed = [labels[j] for j in rng.permutation(n_docs)]
        weights = np.zeros(n_docs)
        for j, label in enumerate(placed):
            if label is DocumentLabel.RELEVANT:
                weights[j] = rng.uniform(*relevant_range)
            elif label is DocumentLabel.HARD_NEGATIVE:
                weights[j] = rng.uniform(*hard_range)
        pair: tuple[int, int] | None = None
        if kind is not GameKind.ADDITIVE:
            candidates = [j for j, label in enumerate(placed) if label is DocumentLabel.RELEVANT]
            chosen = sorted(int(j) for j in rng.choice(candidates, size=2, replace=False))
            pair = (chosen[0], chosen[1])
            weights[list(pair)] = 0.0
        noiseless = GameSpec(kind, n_docs, tuple(weights.tolist()), pair, pair_value)
        full_value = math.fsum(noiseless.weights) + scenario_term(noiseless, (1 << n_docs) - 1)
        game = GameSpec(
            kind,
            n_docs,
            noiseless.weights,
            pair,
            pair_value,
            noise_sigma=noise_fraction * abs(full_value),
            noise_seed=int(rng.integers(2**63 - 1)),
        )
        case_id = f"game-{i:04d}"
        documents = tuple(
            Document(f"d{j}", f"{label.value.replace('_', ' ').capitalize()} passage {j} of {case_id}.", label)
            for j, label in enumerate(placed)
        )
        cases.append(
            QueryCase(
                case_id=case_id,
                query=f"Synthetic query {i}",
                documents=documents,
                scenario_tag=ScenarioTag.NONE if kind is GameKind.ADDITIVE else ScenarioTag(kind.value),
                positive_pair=pair,
                game=game,
            )
        )
    return cases
