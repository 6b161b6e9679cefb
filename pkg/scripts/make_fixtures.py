#!/usr/bin/env python3
"""Regenerate the bundled pipeline fixtures under fixtures/.

Produces a 20-record annotation corpus, a small VQA record file, an LLM
replay fixture covering every prompt the pipeline will issue against
them, and a ready-to-run pipeline config. Everything is deterministic;
rerunning this script must reproduce the files byte for byte.

The replay entries are keyed by prompt hash, so this script must be
rerun whenever the packaged prompt templates or the conversation prompt
builder change.
"""

from __future__ import annotations

import json
import math
import random
import warnings
from pathlib import Path

from driveforge import gcot, llm, tasks
from driveforge.ingest import parse_corpus

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

ANNOTATIONS = [
    ("the car stops", "because the traffic light is red"),
    ("the car accelerates", "because the road ahead is clear"),
    ("the car merges into the left lane", "because the right lane is closed for construction"),
    ("the car slows down", "because a pedestrian is crossing the street"),
    ("the car turns right", "because the route requires a right turn at the intersection"),
    ("the car keeps a steady speed", "because it is following the flow of traffic"),
    ("the car pulls over to the curb", "because an ambulance is approaching from behind"),
    ("the car turns left", "because the driver is heading into the parking garage"),
    ("the car reverses slowly", "because it is backing into a parking spot"),
    ("the car yields at the roundabout", "because vehicles inside the circle have priority"),
    ("the car brakes hard", "because the vehicle ahead stopped suddenly"),
    ("the car changes to the right lane", "because the driver prepares to exit the highway"),
    ("the car crawls forward", "because traffic is congested during rush hour"),
    ("the car resumes driving", "because the traffic light turned green"),
    ("the car overtakes a truck", "because the truck is moving well below the speed limit"),
    ("the car stops at the crosswalk", "because children are walking to school"),
    ("the car drifts to the shoulder", "because the driver avoids debris on the road"),
    ("the car maintains a large gap", "because the road is wet from rain"),
    ("the car speeds up on the ramp", "because it needs to match highway speed to merge"),
    ("the car halts at the stop sign", "because the intersection requires a full stop"),
]

# Durations in seconds; the sample count is floor(duration), minimum 2
# so every record is eligible for signal prediction.
DURATIONS = [4.0, 3.0, 5.0, 2.5, 4.0, 6.0, 3.5, 4.0, 2.0, 5.5,
             3.0, 4.5, 6.0, 2.0, 5.0, 3.0, 2.5, 4.0, 3.5, 2.0]

VQA_RECORDS = [
    {
        "image_id": "vqa-0001",
        "captions": [
            "Man in all black swimsuit walking down a beach with his surfboard.",
            "A man in a wetsuit carrying a surfboard to the water.",
            "A person with a surfboard walking on a beach.",
            "A person with a surfboard walks to the water.",
            "A man carrying a surfboard across a sandy beach.",
        ],
        "objects": [
            {"label": "bird", "box": [0.095, 0.797, 0.355, 0.849]},
            {"label": "surfboard", "box": [0.388, 0.418, 1.254, 0.977]},
            {"label": "person", "box": [0.431, 0.222, 0.941, 1.362]},
        ],
        "question": "When was this piece of sporting equipment invented?",
        "answer": "1926",
    },
    {
        "image_id": "vqa-0002",
        "captions": [
            "A busy city intersection with cars waiting at a signal.",
            "Vehicles stopped at a red light on a downtown street.",
        ],
        "objects": [
            {"label": "traffic light", "box": [0.62, 0.05, 0.71, 0.3]},
            {"label": "car", "box": [0.1, 0.45, 0.45, 0.8]},
        ],
        "question": "What color is the traffic light?",
        "answer": "red",
    },
    {
        "image_id": "vqa-0003",
        "captions": [
            "A cyclist riding along a bike lane next to parked cars.",
            "A person on a bicycle passing a row of parked vehicles.",
        ],
        "objects": [
            {"label": "bicycle", "box": [0.3, 0.5, 0.55, 0.9]},
            {"label": "person", "box": [0.32, 0.25, 0.52, 0.75]},
            {"label": "car", "box": [0.6, 0.4, 0.95, 0.85]},
        ],
        "question": "Why should drivers leave space on the right side?",
        "answer": "a cyclist is riding there",
    },
]

VQA_REPLIES = {
    "vqa-0001": (
        "1. The picture shows a man carrying a surfboard across a sandy beach. "
        "2. So the sporting equipment in question should refer to the surfboard. "
        "3. In 1926 an American surfer named Tom Blake (1902 - 1994) invented "
        "the very first, hollow surfboard."
    ),
    "vqa-0002": (
        "1. The image shows vehicles stopped at a red light on a downtown street. "
        "2. The traffic light in question is located at [0.62, 0.05, 0.71, 0.3], "
        "above the waiting cars."
    ),
    "vqa-0003": (
        "1. The image shows a cyclist riding in a bike lane beside parked cars. "
        "2. The bicycle at [0.3, 0.5, 0.55, 0.9] is to the left of the car at "
        "[0.6, 0.4, 0.95, 0.85]. "
        "3. Drivers should leave space on the right because the cyclist may need "
        "to swerve around opening doors, so the answer follows from the bike "
        "lane's position."
    ),
}


def conversation_reply(action: str, justification: str) -> str:
    return (
        f"In this clip the ego car's behavior is clear: {action}. The reason is simple — "
        f"{justification}. Under the rules of the road, a driver in this situation is "
        "expected to react exactly this way, adjusting the vehicle's motion to the "
        "conditions around it. The main risk is that surrounding traffic may not "
        "anticipate the maneuver, so the driver should check the mirrors, signal "
        "intentions early, and keep a safe distance from other road users while "
        "carrying it out."
    )


def build_corpus() -> list[dict]:
    rng = random.Random(42)
    rows = []
    for i, ((action, justification), duration) in enumerate(zip(ANNOTATIONS, DURATIONS), start=1):
        # Integer starts with .0/.5 durations keep end - start exact in
        # binary floating point, so the parser's floor() sees no surprises.
        start = float(rng.randrange(0, 60))
        end = start + duration
        n_samples = max(1, math.floor(end - start))
        assert n_samples >= 2, (i, duration)
        signals = []
        speed = round(rng.uniform(0.5, 14.0), 2)
        for t in range(n_samples):
            speed = round(max(0.0, speed + rng.uniform(-2.0, 2.0)), 2)
            signals.append(
                {
                    "t": float(t),
                    "speed": speed,
                    "accelerator": round(rng.uniform(0.0, 1.0), 2),
                    "turn_angle": round(rng.uniform(-25.0, 25.0), 2),
                }
            )
        rows.append(
            {
                "segment_id": f"seg-{i:04d}",
                "video": f"vid-{(i - 1) % 15 + 1:04d}",
                "start": start,
                "end": end,
                "action": action,
                "justification": justification,
                "signals": signals,
            }
        )
    return rows


def main() -> None:
    FIXTURES.mkdir(exist_ok=True)
    corpus_rows = build_corpus()
    corpus_text = "".join(json.dumps(r) + "\n" for r in corpus_rows)
    (FIXTURES / "corpus.jsonl").write_text(corpus_text, encoding="utf-8")

    parsed = parse_corpus(corpus_text)
    assert not parsed.rejects, parsed.rejects
    assert len(parsed.records) == 20

    (FIXTURES / "vqa_records.jsonl").write_text(
        "".join(json.dumps(r) + "\n" for r in VQA_RECORDS), encoding="utf-8"
    )

    replay_rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for raw in VQA_RECORDS:
            record = gcot.vqa_record_from_json(raw)
            prompt = gcot.build_prompt(record)
            replay_rows.append(
                {
                    "prompt_hash": llm.prompt_hash(prompt.messages()),
                    "reply": VQA_REPLIES[record.image_id],
                }
            )
    for record in parsed.records:
        messages = tasks.build_conversation_messages(record)
        replay_rows.append(
            {
                "prompt_hash": llm.prompt_hash(messages),
                "reply": conversation_reply(record.action, record.justification),
            }
        )
    (FIXTURES / "llm_replay.jsonl").write_text(
        "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in replay_rows),
        encoding="utf-8",
    )

    config = {
        "paths": {
            "corpus": "corpus.jsonl",
            "vqa": "vqa_records.jsonl",
            "output": "out",
        },
        "k": 3,
        "retrieval_mode": "text_only",
        "conversation_ratio": 1.0,
        "max_len": 1024,
        "seed": 7,
        "embedding_dim": 64,
        "llm": {
            "mode": "replay",
            "replay": "llm_replay.jsonl",
            "max_concurrency": 1,
            "max_retries": 1,
        },
    }
    (FIXTURES / "pipeline_config.json").write_text(
        json.dumps(config, indent=2) + "\n", encoding="utf-8"
    )
    print(f"wrote fixtures to {FIXTURES}")


if __name__ == "__main__":
    main()
