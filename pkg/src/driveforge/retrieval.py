"""Embedding storage and retrieval of in-context exemplars.

Exemplars for a triplet are its cosine nearest neighbors in a text
embedding space (default) or the union of text- and video-space
neighbors. Search is an exhaustive exact scan — k is tiny, so
approximate structures would only add reproducibility risk. Indices are
build-then-freeze: single-writer inserts, then immutable concurrent
queries.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Protocol, Sequence

import numpy as np

from . import binio
from .errors import (
    DimMismatch,
    EmptyIndex,
    ProviderUnavailable,
    ZeroNorm,
)

DEFAULT_K = 3
MODES = ("text_only", "union")


class Neighbor(NamedTuple):
    id: str
    score: float


@dataclass(frozen=True)
class RetrievalResult:
    neighbors: tuple[Neighbor, ...]

    def ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.neighbors)


class EmbeddingProvider(Protocol):
    """Maps an item (text string or video ref) to a d-dimensional vector."""

    dim: int

    def embed(self, item: str) -> np.ndarray: ...


class FileEmbeddingProvider:
    """Lookup provider over a precomputed embedding container file."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        dim, entries = binio.read_embeddings(self.path)
        self.dim = dim
        self._vectors = {item_id: vec for item_id, vec in entries}

    def embed(self, item: str) -> np.ndarray:
        try:
            return self._vectors[item]
        except KeyError:
            raise ProviderUnavailable(f"{self.path}: no embedding stored for {item!r}") from None


class HashedEmbeddingProvider:
    """Deterministic pseudo-random embeddings for tests and synthetic corpora.

    Each item's vector comes from a PCG64 stream seeded by the SHA-256 of
    (seed, item), so the mapping is stable across runs, processes, and
    platforms — unlike Python's salted ``hash``.
    """

    def __init__(self, dim: int, seed: int = 0):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = dim
        self.seed = seed

    def embed(self, item: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}:{item}".encode("utf-8")).digest()
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "big")))
        vec = rng.standard_normal(self.dim)
        # A zero draw is impossible in practice; guard anyway so the
        # non-zero-norm index invariant cannot be violated.
        if not np.linalg.norm(vec):  # pragma: no cover
            vec[0] = 1.0
        return vec


def embed(item: str, provider: EmbeddingProvider) -> np.ndarray:
    """Embed one item and validate the provider's output contract."""
    vec = np.asarray(provider.embed(item), dtype=np.float64)
    if vec.ndim != 1 or vec.shape[0] != provider.dim:
        raise DimMismatch(
            f"provider returned shape {vec.shape}, expected ({provider.dim},)"
        )
    if not np.all(np.isfinite(vec)):
        raise ValueError(f"non-finite embedding for {item!r}")
    return vec


class EmbeddingIndex:
    """id → vector store for one modality; freeze before querying."""

    def __init__(self, modality: str, dim: int):
        if modality not in ("text", "video"):
            raise ValueError(f"modality must be 'text' or 'video', got {modality!r}")
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.modality = modality
        self.dim = dim
        self._entries: dict[str, np.ndarray] = {}
        self._frozen = False
        self._ids: tuple[str, ...] = ()
        self._matrix: np.ndarray | None = None
        self._norms: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._entries

    def ids(self) -> tuple[str, ...]:
        return tuple(self._entries)

    def vector(self, item_id: str) -> np.ndarray:
        try:
            return self._entries[item_id]
        except KeyError:
            raise KeyError(f"{self.modality} index has no entry {item_id!r}") from None

    def add(self, item_id: str, vector: np.ndarray | Sequence[float]) -> None:
        if self._frozen:
            raise RuntimeError("index is frozen; no further inserts")
        if item_id in self._entries:
            raise ValueError(f"duplicate id {item_id!r}")
        vec = np.asarray(vector, dtype=np.float64)
        if vec.ndim != 1 or vec.shape[0] != self.dim:
            raise DimMismatch(f"{item_id!r}: shape {vec.shape} does not match dim {self.dim}")
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"{item_id!r}: non-finite vector entries")
        if not np.linalg.norm(vec):
            raise ZeroNorm(f"{item_id!r}: zero-norm vector rejected")
        self._entries[item_id] = vec.copy()

    def freeze(self) -> "EmbeddingIndex":
        """Switch to immutable query mode; precomputes the scan matrix."""
        if not self._frozen:
            self._frozen = True
            self._ids = tuple(self._entries)
            if self._ids:
                self._matrix = np.stack([self._entries[i] for i in self._ids])
                self._norms = np.linalg.norm(self._matrix, axis=1)
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    def _scan(self, query: np.ndarray) -> Iterable[Neighbor]:
        if self._matrix is not None:
            scores = (self._matrix @ query) / (self._norms * np.linalg.norm(query))
            np.clip(scores, -1.0, 1.0, out=scores)
            for item_id, score in zip(self._ids, scores):
                yield Neighbor(item_id, float(score))
        else:
            for item_id, vec in self._entries.items():
                yield Neighbor(item_id, cosine(query, vec))


def cosine(u: np.ndarray | Sequence[float], v: np.ndarray | Sequence[float]) -> float:
    """Cosine similarity, clamped into [-1, 1] against rounding overshoot."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise DimMismatch(f"cosine needs equal 1-d shapes, got {u.shape} and {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if not nu or not nv:
        raise ZeroNorm("cosine undefined for zero-norm vectors")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def topk(
    query: np.ndarray | Sequence[float],
    index: EmbeddingIndex,
    k: int,
    exclude: frozenset[str] | set[str] = frozenset(),
) -> RetrievalResult:
    """Exact k highest-cosine entries, score descending, ties by ascending id."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    query = np.asarray(query, dtype=np.float64)
    if query.ndim != 1 or query.shape[0] != index.dim:
        raise DimMismatch(f"query shape {query.shape} does not match index dim {index.dim}")
    if not np.linalg.norm(query):
        raise ZeroNorm("zero-norm query")
    if not index.frozen:
        index.freeze()
    candidates = [n for n in index._scan(query) if n.id not in exclude]
    if not candidates:
        raise EmptyIndex(f"{index.modality} index empty after excluding {len(exclude)} id(s)")
    candidates.sort(key=lambda n: (-n.score, n.id))
    return RetrievalResult(neighbors=tuple(candidates[:k]))


def merge_union(
    first: RetrievalResult, second: RetrievalResult, limit: int
) -> RetrievalResult:
    """Dedup by id keeping the higher score, then re-sort; at most ``limit``."""
    best: dict[str, float] = {}
    for result in (first, second):
        for n in result.neighbors:
            if n.id not in best or n.score > best[n.id]:
                best[n.id] = n.score
    merged = sorted((Neighbor(i, s) for i, s in best.items()), key=lambda n: (-n.score, n.id))
    return RetrievalResult(neighbors=tuple(merged[:limit]))


def retrieve_exemplars(
    z,
    text_index: EmbeddingIndex,
    video_index: EmbeddingIndex | None = None,
    k: int = DEFAULT_K,
    mode: str = "text_only",
) -> RetrievalResult:
    """Retrieve exemplar candidates for triplet ``z`` (object or plain id).

    ``z`` must already be embedded in the text index (and, in union mode,
    the video index); its own id is always excluded so a sequence never
    retrieves itself. text_only mode never touches the video index.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    z_id = getattr(z, "id", z)
    exclude = {z_id}
    text_result = topk(text_index.vector(z_id), text_index, k, exclude)
    if mode == "text_only":
        return text_result
    assert video_index is not None, "union mode requires a video index"
    video_result = topk(video_index.vector(z_id), video_index, k, exclude)
    return merge_union(text_result, video_result, limit=2 * k)


def index_to_file(index: EmbeddingIndex, path: str | Path) -> int:
    entries = [(item_id, index.vector(item_id)) for item_id in index.ids()]
    return binio.write_embeddings(path, index.dim, entries)


def index_from_file(path: str | Path, modality: str) -> EmbeddingIndex:
    dim, entries = binio.read_embeddings(path)
    index = EmbeddingIndex(modality, dim)
    for item_id, vec in entries:
        index.add(item_id, vec)
    return index.freeze()


def text_embedding_input(triplet) -> str:
    """Text-space input is the instruction-answer pair, newline-joined."""
    return f"{triplet.instruction}\n{triplet.answer}"
