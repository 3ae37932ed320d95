"""
Prompt construction for coalition utilities.

Documents in a coalition always appear in their original retrieval order,
each framed by a delimiter line carrying its ordinal; the question comes last.
"""

from dataclasses import dataclass

from fastattribution.coalition import CoalitionMask
from fastattribution.exceptions import BoundsError, ConfigError
from fastattribution.models import QueryCase


@dataclass(frozen=True)
class PromptTemplate:
    """
    Fixed text pieces of a prompt.

    Attributes:
        header: Instruction block placed first.
        document_frame: Format for one document; fields ``ordinal`` and ``text``.
        question_frame: Format for the question; field ``query``.
        separator: Text joining the blocks.
    """

    header: str
    document_frame: str
    question_frame: str
    separator: str = "\n\n"


PROMPT_TEMPLATES: dict[str, PromptTemplate] = {
    "default": PromptTemplate(
        header=(
            "Answer the question using the documents below. "
            "If they do not contain the answer, answer from your own knowledge."
        ),
        document_frame="[Document {ordinal}]\n{text}",
        question_frame="Question: {query}\nAnswer:",
    ),
    "context-only": PromptTemplate(
        header=(
            "Answer the question using only the documents below. "
            "Keep the answer short."
        ),
        document_frame="### Document {ordinal}\n{text}",
        question_frame="### Question\n{query}\n### Answer\n",
    ),
}


def get_template(template_id: str) -> PromptTemplate:
    try:
        return PROMPT_TEMPLATES[template_id]
    except KeyError:
        known = ", ".join(sorted(PROMPT_TEMPLATES))
        raise ConfigError(f"unknown prompt template {template_id!r} (known: {known})") from None


def build_prompt(case: QueryCase, coalition: CoalitionMask, template_id: str = "default") -> str:
    """
    Prompt for the case restricted to the documents in coalition.

    Ordinals are 1-based positions in the full document list, so a document
    keeps its number whichever subset it appears in.

    Raises:
        ConfigError: If template_id is unknown.
        BoundsError: If the mask width differs from the case's document count.
    """
    template = get_template(template_id)
    if coalition.n != case.n:
        raise BoundsError(f"mask width {coalition.n} does not match {case.n} documents")
    blocks = [template.header]
    blocks.extend(
        template.document_frame.format(ordinal=i + 1, text=case.documents[i].text)
        for i in coalition.indices()
    )
    blocks.append(template.question_frame.format(query=case.query))
    return template.separator.join(blocks)
