"""`forge` command-line pipeline: stage-per-subcommand with file handoff.

Stages mirror the data pipeline order — ingest the annotation corpus,
generate grounded chain-of-thought VQA responses, build instruction
triplets, embed them, retrieve exemplar neighbors, assemble interleaved
sequences — plus `verify` (re-check assembled invariants with the
independent scanner) and `stats`. Every stage reads its predecessor's
files from the configured output directory and writes its own artifact
plus a `<stage>.report.json` whose counts reconcile (out + failed == in).

Exit codes: 0 success, 1 stage failure (report still written when the
stage ran), 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import gcot, ingest, retrieval, sequence, tasks
from .config import PipelineConfig, load_config
from .errors import (
    BudgetUnderflow,
    ConfigError,
    DriveForgeError,
    EmptyIndex,
    ExhaustedRetries,
    LlmUnavailable,
    StageError,
)
from .llm import CachedLlmClient, HttpLlmClient, LlmClient, ReplayLlmClient, RetryPolicy, map_concurrent

VALIDATED_CORPUS = "corpus.validated.jsonl"
GCOT_RESPONSES = "gcot_responses.jsonl"
TRIPLETS = "triplets.jsonl"
TEXT_EMBEDDINGS = "text.emb"
VIDEO_EMBEDDINGS = "video.emb"
NEIGHBORS = "neighbors.jsonl"
ASSEMBLED = "assembled.jsonl"

STAGES = ("ingest", "gcot", "tasks", "embed", "retrieve", "assemble", "verify", "stats")


def _output_dir(config: PipelineConfig) -> Path:
    out = Path(config.paths.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _embeddings_dir(config: PipelineConfig) -> Path:
    d = Path(config.paths.embeddings) if config.paths.embeddings else _output_dir(config) / "embeddings"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _templates_dir(config: PipelineConfig) -> Path | None:
    return Path(config.paths.templates) if config.paths.templates else None


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise StageError(f"missing {hint}: {path} (run the upstream stage first)")
    return path


def _write_jsonl(path: Path, objs) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for obj in objs:
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
            n += 1
    return n


def _read_jsonl(path: Path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out


def _report(stage: str, inputs: dict, outputs: dict, n_in: int, n_out: int, failures: list) -> dict:
    return {
        "stage": stage,
        "inputs": inputs,
        "outputs": outputs,
        "counts": {"in": n_in, "out": n_out, "failed": len(failures)},
        "failures": failures,
    }


def _make_client(config: PipelineConfig) -> LlmClient:
    if config.llm.mode == "replay":
        replay_path = _require(Path(config.llm.replay), "LLM replay fixture")
        inner: LlmClient = ReplayLlmClient(replay_path, model=config.llm.model)
    else:
        inner = HttpLlmClient(endpoint=config.llm.endpoint, model=config.llm.model)
    return CachedLlmClient(inner)


def _load_validated_corpus(config: PipelineConfig) -> list[ingest.AnnotationRecord]:
    path = _require(_output_dir(config) / VALIDATED_CORPUS, "validated corpus")
    result = ingest.parse_corpus(path.read_text(encoding="utf-8"))
    if result.rejects:
        raise StageError(f"{path}: validated corpus has {len(result.rejects)} bad line(s)")
    return list(result.records)


def cmd_ingest(config: PipelineConfig) -> dict:
    corpus_path = _require(Path(config.paths.corpus), "annotation corpus")
    result = ingest.parse_corpus(corpus_path.read_text(encoding="utf-8"))
    out_path = _output_dir(config) / VALIDATED_CORPUS
    out_path.write_text(ingest.write_corpus(result.records), encoding="utf-8")
    failures = [{"line": r.line, "error": r.error} for r in result.rejects]
    return _report(
        "ingest",
        inputs={"corpus": str(corpus_path)},
        outputs={"validated": str(out_path)},
        n_in=len(result.records) + len(result.rejects),
        n_out=len(result.records),
        failures=failures,
    )


def cmd_gcot(config: PipelineConfig) -> dict:
    vqa_path = Path(config.paths.vqa) if config.paths.vqa else None
    if vqa_path is None:
        raise StageError("gcot stage needs paths.vqa in the config")
    _require(vqa_path, "VQA record file")
    records = []
    for obj in _read_jsonl(vqa_path):
        records.append(gcot.vqa_record_from_json(obj))
    client = _make_client(config)
    policy = RetryPolicy(max_retries=config.llm.max_retries)
    template = gcot.load_prompt_template(_templates_dir(config))

    def run_one(record: gcot.VqaRecord):
        try:
            return gcot.generate(record, client, policy, template)
        except (ExhaustedRetries, LlmUnavailable) as exc:
            return exc

    results = map_concurrent(run_one, records, max_concurrency=config.llm.max_concurrency)
    rows, failures = [], []
    for record, result in zip(records, results):
        if isinstance(result, Exception):
            failures.append({"id": record.image_id, "error": str(result)})
            continue
        rows.append(
            {
                "image_id": record.image_id,
                "text": gcot.finalize_response(result, record.answer),
                "steps": {
                    "describe": result.step_describe,
                    "locate": result.step_locate,
                    "reason": result.step_reason,
                },
                "final_sentence": result.final_sentence,
            }
        )
    out_path = _output_dir(config) / GCOT_RESPONSES
    _write_jsonl(out_path, rows)
    return _report(
        "gcot",
        inputs={"vqa": str(vqa_path)},
        outputs={"responses": str(out_path)},
        n_in=len(records),
        n_out=len(rows),
        failures=failures,
    )


def cmd_tasks(config: PipelineConfig) -> dict:
    records = _load_validated_corpus(config)
    pools = tasks.load_pools(_templates_dir(config))
    client = _make_client(config)
    corpus = tasks.build_all(
        records,
        pools,
        client,
        seed=config.seed,
        conversation_ratio=config.conversation_ratio,
        max_concurrency=config.llm.max_concurrency,
    )
    out_path = _output_dir(config) / TRIPLETS
    _write_jsonl(out_path, (tasks.triplet_to_json(t) for t in corpus.triplets))
    failures = [{"id": f.segment_id, "error": f.error} for f in corpus.failures]
    # Each record owes up to 4 triplets; accounting is per produced-or-failed unit.
    return _report(
        "tasks",
        inputs={"validated": str(_output_dir(config) / VALIDATED_CORPUS)},
        outputs={"triplets": str(out_path), "stats": corpus.stats},
        n_in=len(corpus.triplets) + len(corpus.failures),
        n_out=len(corpus.triplets),
        failures=failures,
    )


def cmd_embed(config: PipelineConfig) -> dict:
    triplets_path = _require(_output_dir(config) / TRIPLETS, "triplet file")
    triplets = [tasks.triplet_from_json(o) for o in _read_jsonl(triplets_path)]
    provider = retrieval.HashedEmbeddingProvider(config.embedding_dim, seed=config.seed)
    text_index = retrieval.EmbeddingIndex("text", config.embedding_dim)
    video_index = retrieval.EmbeddingIndex("video", config.embedding_dim)
    for t in triplets:
        text_index.add(t.id, retrieval.embed(retrieval.text_embedding_input(t), provider))
        video_index.add(t.id, retrieval.embed(t.video_ref, provider))
    emb_dir = _embeddings_dir(config)
    text_path = emb_dir / TEXT_EMBEDDINGS
    video_path = emb_dir / VIDEO_EMBEDDINGS
    retrieval.index_to_file(text_index, text_path)
    retrieval.index_to_file(video_index, video_path)
    return _report(
        "embed",
        inputs={"triplets": str(triplets_path)},
        outputs={"text": str(text_path), "video": str(video_path), "dim": config.embedding_dim},
        n_in=len(triplets),
        n_out=len(triplets),
        failures=[],
    )


def _per_task_indices(
    full: retrieval.EmbeddingIndex, triplets: list[tasks.InstructionTriplet]
) -> dict[tasks.TaskKind, retrieval.EmbeddingIndex]:
    """Split one embedding index into per-task sub-indices.

    Exemplars share the current instance's task definition, so neighbors
    are only useful within the same task's space.
    """
    split: dict[tasks.TaskKind, retrieval.EmbeddingIndex] = {}
    for t in triplets:
        if t.id not in full:
            continue
        index = split.setdefault(t.task, retrieval.EmbeddingIndex(full.modality, full.dim))
        index.add(t.id, full.vector(t.id))
    for index in split.values():
        index.freeze()
    return split


def cmd_retrieve(config: PipelineConfig) -> dict:
    triplets_path = _require(_output_dir(config) / TRIPLETS, "triplet file")
    emb_dir = _embeddings_dir(config)
    text_path = _require(emb_dir / TEXT_EMBEDDINGS, "text embedding file")
    triplets = [tasks.triplet_from_json(o) for o in _read_jsonl(triplets_path)]
    text_by_task = _per_task_indices(retrieval.index_from_file(text_path, "text"), triplets)
    video_by_task: dict[tasks.TaskKind, retrieval.EmbeddingIndex] = {}
    if config.retrieval_mode == "union":
        video_path = _require(emb_dir / VIDEO_EMBEDDINGS, "video embedding file")
        video_by_task = _per_task_indices(
            retrieval.index_from_file(video_path, "video"), triplets
        )
    rows, failures = [], []
    for t in triplets:
        try:
            result = retrieval.retrieve_exemplars(
                t,
                text_by_task[t.task],
                video_by_task.get(t.task),
                k=config.k,
                mode=config.retrieval_mode,
            )
        except (EmptyIndex, KeyError) as exc:
            failures.append({"id": t.id, "error": str(exc)})
            continue
        rows.append(
            {
                "id": t.id,
                "neighbors": [{"id": n.id, "score": n.score} for n in result.neighbors],
            }
        )
    out_path = _output_dir(config) / NEIGHBORS
    _write_jsonl(out_path, rows)
    return _report(
        "retrieve",
        inputs={"triplets": str(triplets_path), "text": str(text_path)},
        outputs={"neighbors": str(out_path), "k": config.k, "mode": config.retrieval_mode},
        n_in=len(triplets),
        n_out=len(rows),
        failures=failures,
    )


def cmd_assemble(config: PipelineConfig) -> dict:
    out_dir = _output_dir(config)
    triplets_path = _require(out_dir / TRIPLETS, "triplet file")
    neighbors_path = _require(out_dir / NEIGHBORS, "neighbor file")
    triplets = [tasks.triplet_from_json(o) for o in _read_jsonl(triplets_path)]
    by_id = {t.id: t for t in triplets}
    neighbor_ids = {row["id"]: [n["id"] for n in row["neighbors"]] for row in _read_jsonl(neighbors_path)}
    definitions = sequence.load_definitions(_templates_dir(config))
    budget = sequence.TokenBudget(max_len=config.max_len)
    sequences, failures = [], []
    for t in triplets:
        same_task = [
            by_id[nid]
            for nid in neighbor_ids.get(t.id, [])
            if nid in by_id and by_id[nid].task is t.task
        ][: config.k]
        # Retrieval order is most-similar-first; turns go ascending so
        # budget trimming (earliest-first) sacrifices the least similar.
        exemplars = list(reversed(same_task))
        try:
            seq = sequence.assemble(
                definitions[t.task], exemplars, t, budget, max_exemplars=config.k
            )
        except BudgetUnderflow as exc:
            failures.append({"id": t.id, "error": str(exc)})
            continue
        sequences.append(seq)
    out_path = out_dir / ASSEMBLED
    sequence.serialize(sequences, out_path)
    return _report(
        "assemble",
        inputs={"triplets": str(triplets_path), "neighbors": str(neighbors_path)},
        outputs={"assembled": str(out_path), "max_len": config.max_len},
        n_in=len(triplets),
        n_out=len(sequences),
        failures=failures,
    )


def cmd_verify(config: PipelineConfig) -> dict:
    path = _require(_output_dir(config) / ASSEMBLED, "assembled corpus")
    failures = []
    n = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            n += 1
            try:
                seq = sequence.sequence_from_json(json.loads(line))
                problems = sequence.check_sequence(seq)
            except (json.JSONDecodeError, DriveForgeError) as exc:
                problems = [str(exc)]
            for problem in problems:
                failures.append({"line": lineno, "error": problem})
    if n == 0:
        print("warning: assembled corpus is empty", file=sys.stderr)
    bad_lines = {f["line"] for f in failures}
    return _report(
        "verify",
        inputs={"assembled": str(path)},
        outputs={},
        n_in=n,
        n_out=n - len(bad_lines),
        failures=failures,
    )


def cmd_stats(config: PipelineConfig) -> dict:
    corpus_path = _require(Path(config.paths.corpus), "annotation corpus")
    result = ingest.parse_corpus(corpus_path.read_text(encoding="utf-8"))
    stats = ingest.corpus_stats(result.records)
    payload = {
        "segments": stats.segments,
        "videos": stats.videos,
        "duration_histogram": {str(k): v for k, v in stats.duration_histogram.items()},
        "rejected_lines": len(result.rejects),
    }
    triplets_path = _output_dir(config) / TRIPLETS
    if triplets_path.exists():
        triplets = [tasks.triplet_from_json(o) for o in _read_jsonl(triplets_path)]
        payload["tasks"] = tasks.count_by_task(triplets)
    return _report(
        "stats",
        inputs={"corpus": str(corpus_path)},
        outputs=payload,
        n_in=stats.segments,
        n_out=stats.segments,
        failures=[],
    )


_COMMANDS = {
    "ingest": cmd_ingest,
    "gcot": cmd_gcot,
    "tasks": cmd_tasks,
    "embed": cmd_embed,
    "retrieve": cmd_retrieve,
    "assemble": cmd_assemble,
    "verify": cmd_verify,
    "stats": cmd_stats,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forge",
        description="Driving instruction-tuning data pipeline.",
    )
    parser.add_argument("stage", choices=STAGES, help="pipeline stage to run")
    parser.add_argument("--config", required=True, help="path to the JSON pipeline config")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--k", type=int, default=None, help="override retrieval depth")
    parser.add_argument(
        "--mode",
        choices=("text_only", "union"),
        default=None,
        help="override retrieval mode",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.k is not None:
        overrides["k"] = args.k
    if args.mode is not None:
        overrides["retrieval_mode"] = args.mode
    try:
        config = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        report = _COMMANDS[args.stage](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"{args.stage} failed: {exc}", file=sys.stderr)
        return 1
    report_path = _output_dir(config) / f"{args.stage}.report.json"
    report_path.write_text(json.dumps(report, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    print(json.dumps(report, indent=2, ensure_ascii=False))
    if report["counts"]["failed"]:
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
