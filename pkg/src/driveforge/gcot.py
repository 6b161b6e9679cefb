"""Grounded chain-of-thought response generation for VQA records.

A response has three numbered steps (scene description, object
localization, optional reasoning) and closes with the fixed sentence
"So the answer is {answer}.". Steps come from an external chat LLM; this
module builds the prompt, parses and finalizes replies, and provides a
deterministic bounding-box relation resolver used for validation and
offline audits (relevance matching itself is left to the LLM).
"""

from __future__ import annotations

import json
import re
import threading
import warnings
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import NamedTuple, Sequence

from ._resources import read_template
from .errors import ExhaustedRetries, ParseError, TemplateError
from .llm import LlmClient, Message, RetryPolicy

PROMPT_TEMPLATE_FILE = "gcot_prompt.txt"
_PLACEHOLDERS = ("{captions}", "{objects}", "{question}", "{answer}")
_SECTION_SEPARATOR = "\n---\n"


class BoxRangeWarning(UserWarning):
    """A bounding-box coordinate fell outside the nominal [0, 1] range."""


@dataclass(frozen=True)
class BoundingBox:
    """Corners (x1, y1) top-left and (x2, y2) bottom-right, nominally in [0, 1].

    Out-of-range values occur in real annotation data and only warn.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(
                f"degenerate box: need x1 < x2 and y1 < y2, got "
                f"[{self.x1}, {self.y1}, {self.x2}, {self.y2}]"
            )
        if any(v < 0.0 or v > 1.0 for v in (self.x1, self.y1, self.x2, self.y2)):
            warnings.warn(
                f"box [{self.x1}, {self.y1}, {self.x2}, {self.y2}] has "
                "coordinates outside [0, 1]; kept as given",
                BoxRangeWarning,
                stacklevel=2,
            )


@dataclass(frozen=True)
class VqaRecord:
    image_id: str
    captions: tuple[str, ...]
    objects: tuple[tuple[str, BoundingBox], ...]
    question: str
    answer: str

    def __post_init__(self):
        if not self.captions and not self.objects:
            raise ValueError(f"{self.image_id}: need at least one caption or object")
        if not self.answer:
            raise ValueError(f"{self.image_id}: answer must be non-empty")


class SpatialRelation(Enum):
    RIGHT_OF = "right_of"
    LEFT_OF = "left_of"
    ON_TOP_OF = "on_top_of"
    BELOW = "below"
    OVERLAPPING = "overlapping"


@dataclass(frozen=True)
class GCoTResponse:
    """Parsed three-step response; ``final_sentence`` is filled by ``generate``."""

    step_describe: str
    step_locate: str
    step_reason: str = ""
    final_sentence: str = ""


class PromptText(NamedTuple):
    system: str
    user: str

    def messages(self) -> list[Message]:
        return [
            {"role": "system", "content": self.system},
            {"role": "user", "content": self.user},
        ]


def final_sentence_for(answer: str) -> str:
    return f"So the answer is {answer}."


def load_prompt_template(templates_dir: str | Path | None = None) -> PromptText:
    """Load the prompt template and validate its placeholders.

    The file holds the system message, a ``---`` separator line, and the
    user section containing the four placeholders.
    """
    text = read_template(PROMPT_TEMPLATE_FILE, templates_dir)
    missing = [p for p in _PLACEHOLDERS if p not in text]
    if missing:
        raise TemplateError(f"template lacks placeholders: {', '.join(missing)}")
    if _SECTION_SEPARATOR not in text:
        raise TemplateError("template lacks the '---' system/user separator line")
    system, user = text.split(_SECTION_SEPARATOR, 1)
    return PromptText(system.strip("\n"), user.strip("\n"))


def _format_coord(value: float) -> str:
    return f"{value:g}"


def format_objects(objects: Sequence[tuple[str, BoundingBox]]) -> str:
    lines = []
    for label, box in objects:
        coords = ", ".join(_format_coord(v) for v in (box.x1, box.y1, box.x2, box.y2))
        lines.append(f"{label}: [{coords}]")
    return "\n".join(lines)


def build_prompt(record: VqaRecord, template: PromptText | None = None) -> PromptText:
    """Render the generation prompt for one record. Deterministic."""
    if template is None:
        template = load_prompt_template()
    if not record.objects:
        warnings.warn(f"{record.image_id}: no objects; Objects block left empty", stacklevel=2)
    user = template.user.format(
        captions="\n".join(record.captions),
        objects=format_objects(record.objects),
        question=record.question,
        answer=record.answer,
    )
    return PromptText(template.system, user)


def resolve_spatial_relation(
    a: BoundingBox, b: BoundingBox, vertical_convention: str = "paper"
) -> set[SpatialRelation]:
    """Relations of box ``a`` relative to ``b`` from bottom-right corner comparison.

    Horizontal: a.x2 > b.x2 means right_of, a.x2 < b.x2 means left_of.
    Vertical under the default convention: a.y2 > b.y2 means on_top_of,
    a.y2 < b.y2 means below. ``vertical_convention="image"`` flips the
    vertical mapping to match screen coordinates (larger y is lower).
    Equality on an axis contributes ``overlapping``.
    """
    if vertical_convention not in ("paper", "image"):
        raise ValueError(f"unknown vertical convention {vertical_convention!r}")
    relations: set[SpatialRelation] = set()
    if a.x2 > b.x2:
        relations.add(SpatialRelation.RIGHT_OF)
    elif a.x2 < b.x2:
        relations.add(SpatialRelation.LEFT_OF)
    else:
        relations.add(SpatialRelation.OVERLAPPING)
    above = SpatialRelation.ON_TOP_OF if vertical_convention == "paper" else SpatialRelation.BELOW
    below = SpatialRelation.BELOW if vertical_convention == "paper" else SpatialRelation.ON_TOP_OF
    if a.y2 > b.y2:
        relations.add(above)
    elif a.y2 < b.y2:
        relations.add(below)
    else:
        relations.add(SpatialRelation.OVERLAPPING)
    return relations


_STEP_MARKER = re.compile(r"(?:(?<=^)|(?<=\s))([123])\.(?=\s)")


def parse_gcot_reply(raw: str) -> GCoTResponse:
    """Split a raw reply into the numbered steps.

    Steps 1 and 2 are mandatory; a missing step 3 yields an empty
    ``step_reason``. Content is never fabricated: each step text is taken
    verbatim (trimmed) from the reply.
    """
    markers: dict[int, tuple[int, int]] = {}
    cursor = 0
    for want in (1, 2, 3):
        match = None
        for m in _STEP_MARKER.finditer(raw, cursor):
            if int(m.group(1)) == want:
                match = m
                break
        if match is None:
            if want == 3:
                break
            raise ParseError(f"reply lacks step {want}")
        markers[want] = (match.start(), match.end())
        cursor = match.end()
    spans = sorted(markers.items())
    texts: dict[int, str] = {}
    for (num, (_, text_start)), nxt in zip(spans, spans[1:] + [None]):
        text_end = nxt[1][0] if nxt else len(raw)
        texts[num] = raw[text_start:text_end].strip()
    if not texts.get(1):
        raise ParseError("step 1 is empty")
    if not texts.get(2):
        raise ParseError("step 2 is empty")
    return GCoTResponse(
        step_describe=texts[1],
        step_locate=texts[2],
        step_reason=texts.get(3, ""),
    )


def render_reply(response: GCoTResponse) -> str:
    """Inverse of ``parse_gcot_reply`` for the three step texts."""
    lines = [f"1. {response.step_describe}", f"2. {response.step_locate}"]
    if response.step_reason:
        lines.append(f"3. {response.step_reason}")
    return "\n".join(lines)


def finalize_response(response: GCoTResponse, answer: str) -> str:
    """Join non-empty steps with single spaces and append the closing sentence."""
    parts = [s for s in (response.step_describe, response.step_locate, response.step_reason) if s]
    return " ".join(parts) + " " + final_sentence_for(answer)


class AuditLog:
    """Append-only JSONL log of every raw LLM exchange; thread-safe."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self.entries: list[dict] = []
        self._lock = threading.Lock()

    def write(self, item_id: str, prompt: PromptText, raw_reply: str, parsed_ok: bool) -> None:
        entry = {
            "id": item_id,
            "prompt": prompt.system + "\n\n" + prompt.user,
            "raw_reply": raw_reply,
            "parsed_ok": parsed_ok,
        }
        with self._lock:
            self.entries.append(entry)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry) + "\n")


def generate(
    record: VqaRecord,
    client: LlmClient,
    policy: RetryPolicy = RetryPolicy(),
    template: PromptText | None = None,
    audit: AuditLog | None = None,
) -> GCoTResponse:
    """Prompt the client and return a parsed, finalized response.

    Parse failures retry up to ``policy.max_retries`` extra calls;
    every raw reply is written to the audit log either way. Client
    unavailability is not retried here.
    """
    prompt = build_prompt(record, template)
    messages = prompt.messages()
    last_error: ParseError | None = None
    for _ in range(policy.max_retries + 1):
        reply = client.complete(messages)
        try:
            parsed = parse_gcot_reply(reply)
        except ParseError as exc:
            last_error = exc
            if audit is not None:
                audit.write(record.image_id, prompt, reply, parsed_ok=False)
            continue
        if audit is not None:
            audit.write(record.image_id, prompt, reply, parsed_ok=True)
        return replace(parsed, final_sentence=final_sentence_for(record.answer))
    raise ExhaustedRetries(
        f"{record.image_id}: no parseable reply in {policy.max_retries + 1} attempts",
        last_error=last_error,
    )


def vqa_record_from_json(obj: dict) -> VqaRecord:
    """Build a record from the VQA JSONL schema (captions, objects, question, answer)."""
    objects = tuple(
        (o["label"], BoundingBox(*o["box"])) for o in obj.get("objects", [])
    )
    return VqaRecord(
        image_id=obj["image_id"],
        captions=tuple(obj.get("captions", [])),
        objects=objects,
        question=obj["question"],
        answer=obj["answer"],
    )
