"""Ingestion of driving segment annotations.

Input is JSONL, one object per line:
    {"segment_id": str, "video": str, "start": number, "end": number,
     "action": str, "justification": str,
     "signals": [{"t": number, "speed": number, "accelerator": number,
                  "turn_angle": number}, ...]}

Segments carry an action description, a justification for that action,
and one control sample per second of duration (speed in m/s,
accelerator normalized to [0, 1], turn angle in signed degrees).
Malformed lines are quarantined into a rejects report instead of
aborting the run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Iterable, Union

from .errors import IoFailure

RawStream = Union[bytes, str, IO]


@dataclass(frozen=True)
class ControlSample:
    """One per-second control reading, relative to segment start."""

    t: float
    speed: float
    accelerator: float
    turn_angle: float


@dataclass(frozen=True)
class ControlSignalSeries:
    samples: tuple[ControlSample, ...]

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class AnnotationRecord:
    """One annotated video segment."""

    segment_id: str
    video_ref: str
    start_time: float
    end_time: float
    action: str
    justification: str
    signals: ControlSignalSeries

    @property
    def duration(self) -> float:
        return self.end_time - self.start_time

    @property
    def expected_sample_count(self) -> int:
        # One sample per whole second of duration, never fewer than one.
        return max(1, math.floor(self.duration))


@dataclass(frozen=True)
class RejectedLine:
    line: int
    error: str


@dataclass
class ParseResult:
    records: list[AnnotationRecord]
    rejects: list[RejectedLine]


@dataclass(frozen=True)
class CorpusStats:
    segments: int
    videos: int
    duration_histogram: dict[int, int]


def validate_record(record: AnnotationRecord) -> list[str]:
    """Return the list of violated invariants; empty means valid. Never raises."""
    violations: list[str] = []
    if record.start_time < 0 or record.end_time < 0:
        violations.append("time range: start and end must be non-negative")
    if not record.end_time > record.start_time:
        violations.append("duration: end must be strictly greater than start")
    if not record.action.strip():
        violations.append("action: empty after trimming")
    if not record.justification.strip():
        violations.append("justification: empty after trimming")
    if record.end_time > record.start_time:
        expected = record.expected_sample_count
        if len(record.signals) != expected:
            violations.append(
                f"signal count: expected {expected} samples for a "
                f"{record.duration:g}s segment, got {len(record.signals)}"
            )
    times = [s.t for s in record.signals.samples]
    if any(b <= a for a, b in zip(times, times[1:])):
        violations.append("signal timestamps: not strictly increasing")
    for sample in record.signals.samples:
        if sample.speed < 0:
            violations.append(f"speed: negative value {sample.speed:g} at t={sample.t:g}")
        if not 0.0 <= sample.accelerator <= 1.0:
            violations.append(
                f"accelerator: value {sample.accelerator:g} outside [0, 1] at t={sample.t:g}"
            )
    return violations


def _require_number(obj: dict, key: str) -> float:
    value = obj.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"field {key!r} must be a number")
    return float(value)


def _require_string(obj: dict, key: str) -> str:
    value = obj.get(key)
    if not isinstance(value, str):
        raise ValueError(f"field {key!r} must be a string")
    return value


def _record_from_json(obj: dict) -> AnnotationRecord:
    if not isinstance(obj, dict):
        raise ValueError("line is not a JSON object")
    for key in ("segment_id", "video", "start", "end", "action", "justification", "signals"):
        if key not in obj:
            raise ValueError(f"missing field {key!r}")
    raw_signals = obj["signals"]
    if not isinstance(raw_signals, list):
        raise ValueError("field 'signals' must be an array")
    samples = []
    for i, s in enumerate(raw_signals):
        if not isinstance(s, dict):
            raise ValueError(f"signal {i} is not an object")
        samples.append(
            ControlSample(
                t=_require_number(s, "t"),
                speed=_require_number(s, "speed"),
                accelerator=_require_number(s, "accelerator"),
                turn_angle=_require_number(s, "turn_angle"),
            )
        )
    segment_id = _require_string(obj, "segment_id")
    if not segment_id:
        raise ValueError("field 'segment_id' must be non-empty")
    return AnnotationRecord(
        segment_id=segment_id,
        video_ref=_require_string(obj, "video"),
        start_time=_require_number(obj, "start"),
        end_time=_require_number(obj, "end"),
        action=_require_string(obj, "action"),
        justification=_require_string(obj, "justification"),
        signals=ControlSignalSeries(tuple(samples)),
    )


def parse_corpus(raw: RawStream, fmt: str = "jsonl") -> ParseResult:
    """Parse an annotation stream into validated records plus a rejects report.

    Every emitted record satisfies all invariants (checked via
    ``validate_record`` plus corpus-level segment_id uniqueness). A line
    that fails JSON decoding, the schema, or any invariant lands in the
    rejects list with its 1-based line number. Blank lines are skipped.
    """
    if fmt != "jsonl":
        raise ValueError(f"unsupported format {fmt!r}")
    if hasattr(raw, "read"):
        try:
            raw = raw.read()
        except OSError as exc:
            raise IoFailure(f"stream unreadable: {exc}") from exc
    if isinstance(raw, bytes):
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise IoFailure(f"stream is not valid UTF-8: {exc}") from exc
    else:
        text = raw

    records: list[AnnotationRecord] = []
    rejects: list[RejectedLine] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            rejects.append(RejectedLine(lineno, f"invalid JSON: {exc.msg}"))
            continue
        try:
            record = _record_from_json(obj)
        except ValueError as exc:
            rejects.append(RejectedLine(lineno, str(exc)))
            continue
        violations = validate_record(record)
        if record.segment_id in seen_ids:
            violations.append(f"segment_id: duplicate {record.segment_id!r}")
        if violations:
            rejects.append(RejectedLine(lineno, "; ".join(violations)))
            continue
        seen_ids.add(record.segment_id)
        records.append(record)
    return ParseResult(records, rejects)


def record_to_json(record: AnnotationRecord) -> dict:
    return {
        "segment_id": record.segment_id,
        "video": record.video_ref,
        "start": record.start_time,
        "end": record.end_time,
        "action": record.action,
        "justification": record.justification,
        "signals": [
            {"t": s.t, "speed": s.speed, "accelerator": s.accelerator, "turn_angle": s.turn_angle}
            for s in record.signals.samples
        ],
    }


def write_corpus(records: Iterable[AnnotationRecord]) -> str:
    """Serialize records back to the input JSONL schema (round-trip safe)."""
    return "".join(json.dumps(record_to_json(r)) + "\n" for r in records)


def corpus_stats(records: Iterable[AnnotationRecord]) -> CorpusStats:
    """Exact segment/video counts and a whole-second duration histogram."""
    records = list(records)
    histogram: dict[int, int] = {}
    for record in records:
        bucket = math.floor(record.duration)
        histogram[bucket] = histogram.get(bucket, 0) + 1
    return CorpusStats(
        segments=len(records),
        videos=len({r.video_ref for r in records}),
        duration_histogram=dict(sorted(histogram.items())),
    )
