"""Construction of the four driving instruction tasks.

Each annotation record can yield up to four video-instruction-answer
triplets: behavior understanding (answer = action label), behavior
reasoning (answer = justification label), control-signal prediction
(answer = final sample rendered from the history), and an LLM-enriched
detailed conversation. Understanding/reasoning/conversation instructions
are drawn deterministically from editable paraphrase pools; the signal
task embeds the signal history in its instruction.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

from ._resources import read_template
from .errors import EmptyPool, InsufficientSignals, LlmUnavailable
from .ingest import AnnotationRecord, ControlSample
from .llm import LlmClient, Message, map_concurrent


class TaskKind(Enum):
    BEHAVIOR_UNDERSTANDING = "behavior_understanding"
    BEHAVIOR_REASONING = "behavior_reasoning"
    SIGNAL_PREDICTION = "signal_prediction"
    DETAILED_CONVERSATION = "detailed_conversation"


#: Tasks whose instruction comes from a paraphrase pool file.
POOLED_TASKS = (
    TaskKind.BEHAVIOR_UNDERSTANDING,
    TaskKind.BEHAVIOR_REASONING,
    TaskKind.DETAILED_CONVERSATION,
)

#: Tasks answered directly from annotation labels (no LLM involved).
LABEL_TASKS = (
    TaskKind.BEHAVIOR_UNDERSTANDING,
    TaskKind.BEHAVIOR_REASONING,
    TaskKind.SIGNAL_PREDICTION,
)


@dataclass(frozen=True)
class InstructionTriplet:
    id: str
    video_ref: str
    task: TaskKind
    instruction: str
    answer: str

    def __post_init__(self):
        if not self.answer:
            raise ValueError(f"{self.id}: answer must be non-empty")


@dataclass(frozen=True)
class InstructionTemplatePool:
    task: TaskKind
    templates: tuple[str, ...]

    def __post_init__(self):
        if not self.templates:
            raise EmptyPool(f"{self.task.value}: instruction pool is empty")
        if len(set(self.templates)) != len(self.templates):
            raise ValueError(f"{self.task.value}: duplicate instructions in pool")


@dataclass(frozen=True)
class TaskFailure:
    segment_id: str
    error: str


@dataclass(frozen=True)
class TaskCorpus:
    triplets: tuple[InstructionTriplet, ...]
    stats: dict[str, int] = field(default_factory=dict)
    failures: tuple[TaskFailure, ...] = ()


def load_pool(task: TaskKind, templates_dir: str | Path | None = None) -> InstructionTemplatePool:
    """Load one task's instruction paraphrases (one per line, blanks skipped)."""
    text = read_template(f"instructions_{task.value}.txt", templates_dir)
    lines = tuple(line.strip() for line in text.splitlines() if line.strip())
    return InstructionTemplatePool(task=task, templates=lines)


def load_pools(
    templates_dir: str | Path | None = None,
) -> dict[TaskKind, InstructionTemplatePool]:
    return {task: load_pool(task, templates_dir) for task in POOLED_TASKS}


def _stable_digest(key: str) -> int:
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest(), "big")


def pick_instruction(pool: InstructionTemplatePool, segment_id: str, rng_seed: int) -> str:
    """Deterministic pool pick keyed on (seed, task, segment); no global RNG state."""
    if not pool.templates:
        raise EmptyPool(f"{pool.task.value}: instruction pool is empty")
    digest = _stable_digest(f"{rng_seed}:{pool.task.value}:{segment_id}")
    return pool.templates[digest % len(pool.templates)]


def _triplet_id(record: AnnotationRecord, task: TaskKind) -> str:
    return f"{record.segment_id}:{task.value}"


def build_behavior_understanding(
    record: AnnotationRecord, pool: InstructionTemplatePool, rng_seed: int
) -> InstructionTriplet:
    """Answer is the action label verbatim."""
    return InstructionTriplet(
        id=_triplet_id(record, TaskKind.BEHAVIOR_UNDERSTANDING),
        video_ref=record.video_ref,
        task=TaskKind.BEHAVIOR_UNDERSTANDING,
        instruction=pick_instruction(pool, record.segment_id, rng_seed),
        answer=record.action,
    )


def build_behavior_reasoning(
    record: AnnotationRecord, pool: InstructionTemplatePool, rng_seed: int
) -> InstructionTriplet:
    """Answer is the justification label verbatim."""
    return InstructionTriplet(
        id=_triplet_id(record, TaskKind.BEHAVIOR_REASONING),
        video_ref=record.video_ref,
        task=TaskKind.BEHAVIOR_REASONING,
        instruction=pick_instruction(pool, record.segment_id, rng_seed),
        answer=record.justification,
    )


def render_history_line(sample: ControlSample) -> str:
    return (
        f"t={sample.t:g}: speed={sample.speed:.2f}, "
        f"accel={sample.accelerator:.2f}, angle={sample.turn_angle:.2f}"
    )


def render_signal_answer(sample: ControlSample) -> str:
    return f"speed={sample.speed:.2f}, angle={sample.turn_angle:.2f}"


_SIGNAL_ANSWER = re.compile(r"^speed=(-?\d+\.\d{2}), angle=(-?\d+\.\d{2})$")


def parse_signal_answer(answer: str) -> tuple[float, float]:
    """Inverse of ``render_signal_answer``; returns (speed, turn_angle)."""
    match = _SIGNAL_ANSWER.match(answer)
    if match is None:
        raise ValueError(f"not a signal-prediction answer: {answer!r}")
    return float(match.group(1)), float(match.group(2))


def build_signal_prediction(record: AnnotationRecord) -> InstructionTriplet:
    """Instruction carries all-but-last samples as history; answer is the last."""
    samples = record.signals.samples
    if len(samples) < 2:
        raise InsufficientSignals(
            f"{record.segment_id}: signal prediction needs at least 2 samples, "
            f"got {len(samples)}"
        )
    history = "\n".join(render_history_line(s) for s in samples[:-1])
    instruction = (
        "The ego car's control signals so far are:\n"
        f"{history}\n"
        "Predict the ego car's speed and turn angle for the next second."
    )
    return InstructionTriplet(
        id=_triplet_id(record, TaskKind.SIGNAL_PREDICTION),
        video_ref=record.video_ref,
        task=TaskKind.SIGNAL_PREDICTION,
        instruction=instruction,
        answer=render_signal_answer(samples[-1]),
    )


def build_conversation_messages(record: AnnotationRecord) -> list[Message]:
    """Chat messages asking the LLM to enrich the record's labels."""
    system = (
        "You are an experienced driving instructor. Expand terse ego-car "
        "annotations into a detailed, natural answer. Cover relevant traffic "
        "rules, potential risks of the behavior, and driving precautions. Do "
        "not invent events that contradict the annotation."
    )
    user = (
        f"Action: {record.action}\n"
        f"Justification: {record.justification}\n\n"
        "Write the enriched answer."
    )
    return [
        {"role": "system", "content": system},
        {"role": "user", "content": user},
    ]


def build_detailed_conversation(
    record: AnnotationRecord,
    client: LlmClient,
    pool: InstructionTemplatePool,
    rng_seed: int,
) -> InstructionTriplet:
    """LLM-enriched long-form answer; wrap the client in a cache to dedupe reruns."""
    reply = client.complete(build_conversation_messages(record))
    if not reply.strip():
        raise LlmUnavailable(f"{record.segment_id}: empty conversation reply")
    return InstructionTriplet(
        id=_triplet_id(record, TaskKind.DETAILED_CONVERSATION),
        video_ref=record.video_ref,
        task=TaskKind.DETAILED_CONVERSATION,
        instruction=pick_instruction(pool, record.segment_id, rng_seed),
        answer=reply,
    )


def eligible_for_label_tasks(record: AnnotationRecord) -> bool:
    """Label triplets are emitted all-or-nothing; signal prediction sets the bar."""
    return len(record.signals) >= 2


def select_conversation_ids(
    records: Sequence[AnnotationRecord], conversation_ratio: float, seed: int
) -> set[str]:
    """Exact-count subset of segment ids for the conversation task.

    Takes ``int(ratio * n + 0.5)`` records ranked by a stable per-segment
    digest, so the subset is reproducible across runs and processes and the
    realized count matches the configured ratio exactly (not in expectation).
    """
    if not 0.0 <= conversation_ratio <= 1.0:
        raise ValueError(f"conversation_ratio must be in [0, 1], got {conversation_ratio}")
    count = int(conversation_ratio * len(records) + 0.5)
    ranked = sorted(
        records,
        key=lambda r: (_stable_digest(f"{seed}:conversation:{r.segment_id}"), r.segment_id),
    )
    return {r.segment_id for r in ranked[:count]}


def count_by_task(triplets: Sequence[InstructionTriplet]) -> dict[str, int]:
    counts = {task.value: 0 for task in TaskKind}
    for t in triplets:
        counts[t.task.value] += 1
    return counts


def build_all(
    records: Sequence[AnnotationRecord],
    pools: Mapping[TaskKind, InstructionTemplatePool],
    client: LlmClient,
    seed: int,
    conversation_ratio: float = 1.0,
    max_concurrency: int = 1,
) -> TaskCorpus:
    """Build every task triplet for a corpus.

    Records with at least two control samples emit the three label-derived
    triplets; records that fall short emit none of them and are recorded as
    failures. Independently, an exact-count subset of all records (chosen by
    ``conversation_ratio``) emits one detailed-conversation triplet each.
    Per-record errors land in the failure list instead of aborting the run.
    Output order is corpus order with the record's triplets grouped together,
    regardless of LLM concurrency.
    """
    conversation_ids = select_conversation_ids(records, conversation_ratio, seed)
    conversation_records = [r for r in records if r.segment_id in conversation_ids]

    def converse(record: AnnotationRecord) -> InstructionTriplet | Exception:
        try:
            return build_detailed_conversation(
                record, client, pools[TaskKind.DETAILED_CONVERSATION], seed
            )
        except LlmUnavailable as exc:
            return exc

    conversation_results = dict(
        zip(
            (r.segment_id for r in conversation_records),
            map_concurrent(converse, conversation_records, max_concurrency=max_concurrency),
        )
    )

    triplets: list[InstructionTriplet] = []
    failures: list[TaskFailure] = []
    for record in records:
        if eligible_for_label_tasks(record):
            triplets.append(
                build_behavior_understanding(record, pools[TaskKind.BEHAVIOR_UNDERSTANDING], seed)
            )
            triplets.append(
                build_behavior_reasoning(record, pools[TaskKind.BEHAVIOR_REASONING], seed)
            )
            triplets.append(build_signal_prediction(record))
        else:
            failures.append(
                TaskFailure(
                    segment_id=record.segment_id,
                    error=f"label tasks skipped: {len(record.signals)} signal sample(s), need >= 2",
                )
            )
        result = conversation_results.get(record.segment_id)
        if isinstance(result, InstructionTriplet):
            triplets.append(result)
        elif isinstance(result, Exception):
            failures.append(
                TaskFailure(segment_id=record.segment_id, error=f"conversation failed: {result}")
            )
    built = tuple(triplets)
    return TaskCorpus(triplets=built, stats=count_by_task(built), failures=tuple(failures))


def triplet_to_json(triplet: InstructionTriplet) -> dict:
    return {
        "id": triplet.id,
        "video": triplet.video_ref,
        "task": triplet.task.value,
        "instruction": triplet.instruction,
        "answer": triplet.answer,
    }


def triplet_from_json(obj: dict) -> InstructionTriplet:
    return InstructionTriplet(
        id=obj["id"],
        video_ref=obj["video"],
        task=TaskKind(obj["task"]),
        instruction=obj["instruction"],
        answer=obj["answer"],
    )
