"""Interleaved training-sequence assembly with loss masks and token budget.

A training sequence is: the task definition header, then each retrieved
exemplar as a full User/GPT turn, then the current instance turn. Turns
carry one ``<image>`` media slot, an ``<answer>`` marker opening the
answer span, and a closing ``<endofchunk>``. The loss mask is true
exactly on answer-span tokens plus the closing ``<endofchunk>`` — for
exemplar turns too — and false everywhere else, including ``<answer>``
itself. Sequences exceeding the budget shed whole exemplar turns,
oldest first.

The tokenizer is pluggable; the default splits on whitespace so golden
token dumps stay stable. Mask logic operates on token streams only, so
a real subword tokenizer drops in without changes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence, TextIO

from ._resources import read_template
from .errors import BudgetUnderflow, FormatError, IoFailure
from .tasks import InstructionTriplet, TaskKind

IMAGE = "<image>"
ANSWER = "<answer>"
ENDOFCHUNK = "<endofchunk>"
SPECIAL_TOKENS = (IMAGE, ANSWER, ENDOFCHUNK)

USER_PREFIX = "User:"
GPT_PREFIX = "GPT:"
MEDIA_SENTENCE = "is a driving video."
DEFINITION_PREFIX = "Definition:"

Tokenizer = Callable[[str], list[str]]


def whitespace_tokenize(text: str) -> list[str]:
    """Default tokenizer: whitespace split, no normalization."""
    return text.split()


@dataclass(frozen=True)
class TaskDefinition:
    task: TaskKind
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError(f"{self.task.value}: definition text must be non-empty")


def load_definition(task: TaskKind, templates_dir: str | Path | None = None) -> TaskDefinition:
    text = read_template(f"definition_{task.value}.txt", templates_dir).strip()
    return TaskDefinition(task=task, text=text)


def load_definitions(
    templates_dir: str | Path | None = None,
) -> dict[TaskKind, TaskDefinition]:
    return {task: load_definition(task, templates_dir) for task in TaskKind}


@dataclass(frozen=True)
class InterleavedSequence:
    tokens: tuple[str, ...]
    media_slots: tuple[str, ...]
    loss_mask: tuple[bool, ...]

    def __len__(self) -> int:
        return len(self.tokens)


def _tokenize_plain(text: str, tokenizer: Tokenizer, context: str) -> list[str]:
    tokens = tokenizer(text)
    for tok in tokens:
        if tok in SPECIAL_TOKENS:
            raise ValueError(f"{context}: text contains reserved token {tok!r}")
    return tokens


@dataclass(frozen=True)
class Turn:
    """One rendered User/GPT exchange plus its media slot and mask."""

    tokens: tuple[str, ...]
    media_slots: tuple[str, ...]
    loss_mask: tuple[bool, ...]


def render_turn(triplet: InstructionTriplet, tokenizer: Tokenizer = whitespace_tokenize) -> Turn:
    """Render one triplet as a single User/GPT turn.

    Layout: ``User: <image> is a driving video. {instruction} GPT:
    <answer> {answer} <endofchunk>``. The mask is true on the answer
    tokens and the closing ``<endofchunk>`` only.
    """
    instruction = _tokenize_plain(triplet.instruction, tokenizer, f"{triplet.id} instruction")
    answer = _tokenize_plain(triplet.answer, tokenizer, f"{triplet.id} answer")
    prompt = (
        [USER_PREFIX, IMAGE]
        + tokenizer(MEDIA_SENTENCE)
        + instruction
        + [GPT_PREFIX, ANSWER]
    )
    tokens = prompt + answer + [ENDOFCHUNK]
    mask = [False] * len(prompt) + [True] * len(answer) + [True]
    return Turn(
        tokens=tuple(tokens),
        media_slots=(triplet.video_ref,),
        loss_mask=tuple(mask),
    )


def _concat(header_tokens: Sequence[str], turns: Sequence[Turn]) -> InterleavedSequence:
    tokens: list[str] = list(header_tokens)
    media: list[str] = []
    mask: list[bool] = [False] * len(header_tokens)
    for turn in turns:
        tokens.extend(turn.tokens)
        media.extend(turn.media_slots)
        mask.extend(turn.loss_mask)
    return InterleavedSequence(tuple(tokens), tuple(media), tuple(mask))


@dataclass(frozen=True)
class TokenBudget:
    max_len: int = 1024

    def __post_init__(self):
        if self.max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {self.max_len}")


def assemble(
    definition: TaskDefinition,
    exemplars: Sequence[InstructionTriplet],
    current: InstructionTriplet,
    budget: TokenBudget = TokenBudget(),
    tokenizer: Tokenizer = whitespace_tokenize,
    max_exemplars: int = 3,
) -> InterleavedSequence:
    """Assemble definition + exemplar turns + current turn, then enforce budget.

    Exemplar order is preserved exactly as handed in; budget trimming
    drops the earliest turn first, so callers who want the least similar
    exemplar sacrificed should hand the list in ascending-similarity order.
    """
    if len(exemplars) > max_exemplars:
        raise ValueError(f"{len(exemplars)} exemplars exceed the maximum of {max_exemplars}")
    for ex in exemplars:
        if ex.task is not current.task:
            raise ValueError(
                f"exemplar {ex.id} task {ex.task.value} differs from current {current.task.value}"
            )
    if definition.task is not current.task:
        raise ValueError(
            f"definition task {definition.task.value} differs from current {current.task.value}"
        )
    header = [DEFINITION_PREFIX] + _tokenize_plain(
        definition.text, tokenizer, f"{definition.task.value} definition"
    )
    turns = [render_turn(ex, tokenizer) for ex in exemplars] + [render_turn(current, tokenizer)]
    return enforce_budget(_concat(header, turns), budget)


def _turn_starts(tokens: Sequence[str]) -> list[int]:
    """Start index of each turn: the ``User:`` token preceding each <image>."""
    starts = []
    for i, tok in enumerate(tokens):
        if tok == IMAGE:
            if i == 0 or tokens[i - 1] != USER_PREFIX:
                raise ValueError(f"<image> at position {i} not preceded by {USER_PREFIX!r}")
            starts.append(i - 1)
    return starts


def enforce_budget(seq: InterleavedSequence, budget: TokenBudget) -> InterleavedSequence:
    """Drop whole earliest exemplar turns until the sequence fits.

    The definition header and the final (current-instance) turn are never
    touched; if they alone exceed the budget the sequence is unbuildable
    and BudgetUnderflow is raised. Idempotent: a fitting sequence passes
    through unchanged.
    """
    if len(seq) <= budget.max_len:
        return seq
    starts = _turn_starts(seq.tokens)
    if not starts:
        raise BudgetUnderflow(
            f"sequence of {len(seq)} tokens has no turns to drop (budget {budget.max_len})"
        )
    header_len = starts[0]
    # Token count of each turn; media slots map 1:1 to turns.
    bounds = starts + [len(seq.tokens)]
    turn_lens = [bounds[i + 1] - bounds[i] for i in range(len(starts))]
    keep_from = 0
    total = len(seq)
    while total > budget.max_len and keep_from < len(turn_lens) - 1:
        total -= turn_lens[keep_from]
        keep_from += 1
    if total > budget.max_len:
        raise BudgetUnderflow(
            f"definition + current instance need {total} tokens, over budget {budget.max_len}"
        )
    cut = bounds[keep_from]
    return InterleavedSequence(
        tokens=seq.tokens[:header_len] + seq.tokens[cut:],
        media_slots=seq.media_slots[keep_from:],
        loss_mask=seq.loss_mask[:header_len] + seq.loss_mask[cut:],
    )


def scan_mask(tokens: Sequence[str]) -> tuple[bool, ...]:
    """Independent mask oracle: true strictly after <answer> through <endofchunk>."""
    mask = []
    in_answer = False
    for tok in tokens:
        if tok == ANSWER:
            mask.append(False)
            in_answer = True
        elif in_answer:
            mask.append(True)
            if tok == ENDOFCHUNK:
                in_answer = False
        else:
            mask.append(False)
    return tuple(mask)


def check_sequence(seq: InterleavedSequence) -> list[str]:
    """All invariant violations of one sequence (empty list = valid)."""
    problems = []
    if len(seq.loss_mask) != len(seq.tokens):
        problems.append(
            f"mask length {len(seq.loss_mask)} != token length {len(seq.tokens)}"
        )
    counts = {tok: seq.tokens.count(tok) for tok in SPECIAL_TOKENS}
    if counts[IMAGE] != len(seq.media_slots):
        problems.append(
            f"{counts[IMAGE]} <image> tokens but {len(seq.media_slots)} media slots"
        )
    if not counts[IMAGE] == counts[ANSWER] == counts[ENDOFCHUNK]:
        problems.append(
            "special-token counts diverge: "
            f"<image>={counts[IMAGE]} <answer>={counts[ANSWER]} "
            f"<endofchunk>={counts[ENDOFCHUNK]}"
        )
    open_answer = False
    for i, tok in enumerate(seq.tokens):
        if tok == ANSWER:
            if open_answer:
                problems.append(f"position {i}: <answer> before previous span closed")
            open_answer = True
        elif tok == ENDOFCHUNK:
            if not open_answer:
                problems.append(f"position {i}: <endofchunk> without open answer span")
            open_answer = False
        elif tok == IMAGE and open_answer:
            problems.append(f"position {i}: <image> inside an answer span")
    if open_answer:
        problems.append("sequence ends with an unclosed answer span")
    if len(seq.loss_mask) == len(seq.tokens) and seq.loss_mask != scan_mask(seq.tokens):
        diff = [
            i
            for i, (got, want) in enumerate(zip(seq.loss_mask, scan_mask(seq.tokens)))
            if got != want
        ]
        problems.append(f"loss mask differs from scanner at positions {diff[:10]}")
    return problems


def sequence_to_json(seq: InterleavedSequence) -> dict:
    return {
        "tokens": list(seq.tokens),
        "media": list(seq.media_slots),
        "mask": [1 if m else 0 for m in seq.loss_mask],
    }


def sequence_from_json(obj: dict) -> InterleavedSequence:
    if not isinstance(obj.get("tokens"), list) or not isinstance(obj.get("mask"), list):
        raise FormatError("sequence object needs 'tokens' and 'mask' arrays")
    if len(obj["tokens"]) != len(obj["mask"]):
        raise FormatError(
            f"tokens ({len(obj['tokens'])}) and mask ({len(obj['mask'])}) lengths differ"
        )
    return InterleavedSequence(
        tokens=tuple(obj["tokens"]),
        media_slots=tuple(obj.get("media", [])),
        loss_mask=tuple(bool(m) for m in obj["mask"]),
    )


def serialize(sequences: Iterable[InterleavedSequence], sink: str | Path | TextIO) -> int:
    """Write sequences as JSONL; returns the number of lines written."""

    def _write(fh: TextIO) -> int:
        n = 0
        for seq in sequences:
            fh.write(json.dumps(sequence_to_json(seq), ensure_ascii=False) + "\n")
            n += 1
        return n

    if isinstance(sink, (str, Path)):
        try:
            with open(sink, "w", encoding="utf-8") as fh:
                return _write(fh)
        except OSError as exc:
            raise IoFailure(f"cannot write {sink}: {exc}") from exc
    return _write(sink)


def deserialize(source: str | Path | TextIO) -> list[InterleavedSequence]:
    def _read(fh: TextIO) -> list[InterleavedSequence]:
        out = []
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"line {lineno}: invalid JSON: {exc}") from exc
            out.append(sequence_from_json(obj))
        return out

    if isinstance(source, (str, Path)):
        try:
            with open(source, "r", encoding="utf-8") as fh:
                return _read(fh)
        except OSError as exc:
            raise IoFailure(f"cannot read {source}: {exc}") from exc
    return _read(source)
