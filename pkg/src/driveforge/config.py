"""Pipeline configuration: one JSON file, validated into frozen dataclasses.

Relative paths resolve against the config file's own directory, so a
bundled fixture config runs identically from any working directory.
Command-line flags may override individual fields; the LLM API key is
deliberately not a config field and comes only from the environment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError

RETRIEVAL_MODES = ("text_only", "union")
LLM_MODES = ("live", "replay")
MIN_MAX_LEN = 64


@dataclass(frozen=True)
class Paths:
    corpus: str
    templates: str = ""
    embeddings: str = ""
    output: str = ""
    vqa: str = ""


@dataclass(frozen=True)
class LlmSettings:
    mode: str = "replay"
    endpoint: str = ""
    model: str = "reference"
    replay: str = ""
    max_concurrency: int = 4
    max_retries: int = 2


@dataclass(frozen=True)
class PipelineConfig:
    paths: Paths
    k: int = 3
    retrieval_mode: str = "text_only"
    conversation_ratio: float = 1.0
    max_len: int = 1024
    seed: int = 0
    embedding_dim: int = 64
    llm: LlmSettings = field(default_factory=LlmSettings)

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.retrieval_mode not in RETRIEVAL_MODES:
            raise ConfigError(
                f"retrieval_mode must be one of {RETRIEVAL_MODES}, got {self.retrieval_mode!r}"
            )
        if not 0.0 <= self.conversation_ratio <= 1.0:
            raise ConfigError(
                f"conversation_ratio must be in [0, 1], got {self.conversation_ratio}"
            )
        if self.max_len < MIN_MAX_LEN:
            raise ConfigError(f"max_len must be >= {MIN_MAX_LEN}, got {self.max_len}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must fit in u64, got {self.seed}")
        if self.embedding_dim < 1:
            raise ConfigError(f"embedding_dim must be >= 1, got {self.embedding_dim}")
        if self.llm.mode not in LLM_MODES:
            raise ConfigError(f"llm.mode must be one of {LLM_MODES}, got {self.llm.mode!r}")
        if self.llm.mode == "live" and not self.llm.endpoint:
            raise ConfigError("llm.mode 'live' requires llm.endpoint")
        if self.llm.mode == "replay" and not self.llm.replay:
            raise ConfigError("llm.mode 'replay' requires llm.replay (fixture path)")
        if self.llm.max_concurrency < 1:
            raise ConfigError(f"llm.max_concurrency must be >= 1, got {self.llm.max_concurrency}")
        if self.llm.max_retries < 0:
            raise ConfigError(f"llm.max_retries must be >= 0, got {self.llm.max_retries}")
        if not self.paths.corpus:
            raise ConfigError("paths.corpus is required")
        if not self.paths.output:
            raise ConfigError("paths.output is required")


def _build_section(name: str, cls, obj: dict, required: tuple[str, ...] = ()):
    if not isinstance(obj, dict):
        raise ConfigError(f"{name} must be an object, got {type(obj).__name__}")
    known = set(cls.__dataclass_fields__)
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ConfigError(f"unknown {name} key(s): {', '.join(unknown)}")
    missing = sorted(set(required) - set(obj))
    if missing:
        raise ConfigError(f"missing required {name} key(s): {', '.join(missing)}")
    try:
        return cls(**obj)
    except TypeError as exc:
        raise ConfigError(f"bad {name} section: {exc}") from exc


def _resolve(base: Path, value: str) -> str:
    if not value:
        return value
    p = Path(value)
    return str(p if p.is_absolute() else (base / p))


def load_config(path: str | Path, overrides: dict | None = None) -> PipelineConfig:
    """Parse, validate, and path-resolve a JSON config file.

    ``overrides`` maps top-level field names (k, seed, retrieval_mode, …)
    to replacement values, for command-line flags.
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: config root must be an object")

    known = set(PipelineConfig.__dataclass_fields__)
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s): {', '.join(unknown)}")
    if "paths" not in obj:
        raise ConfigError(f"{path}: missing required 'paths' section")

    paths = _build_section("paths", Paths, obj["paths"], required=("corpus",))
    llm = _build_section("llm", LlmSettings, obj.get("llm", {}))

    base = path.parent
    paths = Paths(
        corpus=_resolve(base, paths.corpus),
        templates=_resolve(base, paths.templates),
        embeddings=_resolve(base, paths.embeddings),
        output=_resolve(base, paths.output),
        vqa=_resolve(base, paths.vqa),
    )
    llm = replace(llm, replay=_resolve(base, llm.replay))

    scalars = {
        key: obj[key] for key in obj if key not in ("paths", "llm")
    }
    try:
        config = PipelineConfig(paths=paths, llm=llm, **scalars)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    if overrides:
        bad = sorted(set(overrides) - set(PipelineConfig.__dataclass_fields__))
        if bad:
            raise ConfigError(f"unknown override(s): {', '.join(bad)}")
        config = replace(config, **overrides)
    return config
