"""Shared test fixtures and record factories."""

from __future__ import annotations

from pathlib import Path

import pytest

from driveforge.ingest import AnnotationRecord, ControlSample, ControlSignalSeries

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    assert FIXTURES.is_dir(), "run scripts/make_fixtures.py first"
    return FIXTURES


def make_record(
    i: int = 1,
    n_samples: int = 4,
    action: str = "the car stops",
    justification: str = "because the traffic light is red",
    video: str | None = None,
) -> AnnotationRecord:
    samples = tuple(
        ControlSample(t=float(t), speed=5.0 + t, accelerator=0.5, turn_angle=1.5 * t)
        for t in range(n_samples)
    )
    return AnnotationRecord(
        segment_id=f"seg-{i:04d}",
        video_ref=video or f"vid-{i:04d}",
        start_time=10.0,
        end_time=10.0 + max(1, n_samples),
        action=action,
        justification=justification,
        signals=ControlSignalSeries(samples),
    )
