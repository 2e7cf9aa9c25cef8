"""Reasoning-enhanced prompt composition and target formatting."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .corpus import STOPWORDS, DocId, tokenize

TASK_TEMPLATES = (
    "Answer the query with a document ID.",
    "Generate the document ID that answers the question.",
    "Based on the question, predict the document ID.",
    "Retrieve a document ID that fits the query.",
    "Using the question, find the document ID.",
)

COT_INSTRUCTIONS = (
    "Use step-by-step reasoning.",
    "You need to explain your answer.",
    "Think this through carefully.",
    "Let's think step-by-step.",
    "Explain your reasoning before answering.",
)

SEPARATOR = " => "
DEFAULT_SHOTS = 2


class PromptError(ValueError):
    pass


class Mode(str, Enum):
    PLAIN = "plain"
    FEWSHOT = "fewshot"
    COT = "cot"
    FEWSHOT_COT = "fewshot_cot"

    @property
    def is_cot(self) -> bool:
        return self in (Mode.COT, Mode.FEWSHOT_COT)

    @property
    def is_fewshot(self) -> bool:
        return self in (Mode.FEWSHOT, Mode.FEWSHOT_COT)


@dataclass(frozen=True)
class PromptTemplate:
    id: int
    text: str


@dataclass(frozen=True)
class CotInstruction:
    id: int
    text: str


TEMPLATES = tuple(PromptTemplate(i, t) for i, t in enumerate(TASK_TEMPLATES))
COT = tuple(CotInstruction(i, t) for i, t in enumerate(COT_INSTRUCTIONS))


@dataclass(frozen=True)
class PromptSample:
    input_text: str
    target_text: str
    mode: Mode
    template_id: int
    cot_id: int | None = None


def enumerate_combinations() -> list[tuple[int, int]]:
    return [(t, c) for t in range(len(TEMPLATES)) for c in range(len(COT))]


def format_fewshot(examples: Sequence[tuple[str, str]]) -> str:
    return "\n".join(f"Query: {q} Document ID: {surface}" for q, surface in examples)


def compose_input(query: str, mode: Mode | str, template_id: int, cot_id: int | None = None,
                  fewshot_examples: Sequence[tuple[str, str]] = ()) -> str:
    mode = Mode(mode)
    head = TEMPLATES[template_id].text
    if mode.is_cot:
        if cot_id is None:
            raise PromptError("cot modes need a cot_id")
        head = f"{head} {COT[cot_id].text}"
    lines = [head]
    if mode.is_fewshot:
        if not fewshot_examples:
            raise PromptError(f"mode {mode.value!r} requires few-shot examples")
        lines.append(format_fewshot(fewshot_examples))
    lines.append(f"Query: {query} Document ID:")
    return "\n".join(lines)


def compose_prompt(rng: np.random.Generator, query: str, mode: Mode | str,
                   fewshot_examples: Sequence[tuple[str, str]] = (),
                   target_text: str = "", *,
                   template_id: int | None = None, cot_id: int | None = None) -> PromptSample:
    """Draw a template (and CoT addition in cot modes) and build the prompt.

    The pair is drawn uniformly from the 5x5 grid with ``rng``; ``template_id``
    and ``cot_id`` override the draw when given. The rng is always advanced
    by exactly one draw so that forcing ids does not shift later samples.
    """
    mode = Mode(mode)
    draw = int(rng.integers(len(TEMPLATES) * len(COT)))
    t_id = draw // len(COT) if template_id is None else template_id
    c_id: int | None = None
    if mode.is_cot:
        c_id = draw % len(COT) if cot_id is None else cot_id
    text = compose_input(query, mode, t_id, c_id, fewshot_examples)
    return PromptSample(text, target_text, mode, t_id, c_id)


def format_target(docid: DocId | str, trace: Sequence[str] | None = None,
                  mode: Mode | str = Mode.PLAIN) -> str:
    surface = docid if isinstance(docid, str) else docid.surface
    if not Mode(mode).is_cot:
        return surface
    steps = [s for s in (trace or ()) if s.strip()]
    if not steps:
        raise PromptError("cot targets need a nonempty reasoning trace")
    return "; ".join(steps) + SEPARATOR + surface


def parse_target(text: str) -> tuple[str, str]:
    """Split a target into (trace, surface) on the last separator."""
    trace, sep, surface = text.rpartition(SEPARATOR)
    if not sep:
        return "", text.strip()
    return trace, surface.strip()


def synthesize_trace(query: str, docid: DocId, max_words: int = 4) -> list[str]:
    """Two-step trace: a key phrase from the query, then the company/year lookup."""
    company, year = docid.components[0], docid.components[1]
    words = [w for w in tokenize(query) if w not in STOPWORDS and w not in (company, year)]
    phrase = " ".join(words[:max_words]) or "the query"
    return [f"find {phrase}", f"company {company}, year {year}"]
