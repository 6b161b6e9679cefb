"""Forward-pass reference kernels for the architecture deltas.

Minimal, pure numpy (float64) implementations of the pieces the model
adds around its frozen encoders: temporal and media position embeddings,
a single-layer single-head perceiver resampler, tanh-gated cross
attention, and the LoRA low-rank adapter. They exist to make the
structural claims executable — zero-gate identity, permutation
(in)sensitivity, LoRA zero-init identity — not to train anything.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, TooManyFrames, TooManyMedia

POSITION_TABLE_KINDS = ("temporal", "media")


def _as_finite_f64(name: str, value, ndim: int) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != ndim:
        raise DimMismatch(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite entries")
    return arr


@dataclass(frozen=True)
class PositionTable:
    """Learned position vectors: one row per frame (temporal) or media item."""

    kind: str
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in POSITION_TABLE_KINDS:
            raise ValueError(f"kind must be one of {POSITION_TABLE_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "values", _as_finite_f64("position table", self.values, 2))
        if self.values.shape[0] < 1:
            raise ValueError("position table needs at least one row")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def add_temporal_embeddings(frames, table: PositionTable) -> np.ndarray:
    """out[t, n, :] = frames[t, n, :] + table[t, :], broadcast over tokens n."""
    frames = _as_finite_f64("frames", frames, 3)
    if table.kind != "temporal":
        raise ValueError(f"expected a temporal table, got {table.kind!r}")
    t, _, d = frames.shape
    if t > table.rows:
        raise TooManyFrames(f"{t} frames exceed the table's T_max of {table.rows}")
    if d != table.dim:
        raise DimMismatch(f"frame dim {d} != table dim {table.dim}")
    return frames + table.values[:t, None, :]


def add_media_embeddings(media, table: PositionTable) -> np.ndarray:
    """out[m, l, :] = media[m, l, :] + table[m, :], broadcast over latents l."""
    media = _as_finite_f64("media", media, 3)
    if table.kind != "media":
        raise ValueError(f"expected a media table, got {table.kind!r}")
    m, _, d = media.shape
    if m > table.rows:
        raise TooManyMedia(f"{m} media items exceed the table's M_max of {table.rows}")
    if d != table.dim:
        raise DimMismatch(f"media dim {d} != table dim {table.dim}")
    return media + table.values[:m, None, :]


def flatten_frames(frames) -> np.ndarray:
    """(T, N, d) frame features -> (T*N, d) visual token matrix."""
    frames = _as_finite_f64("frames", frames, 3)
    t, n, d = frames.shape
    return frames.reshape(t * n, d)


def stable_softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    """Row-stable softmax via max subtraction; rows sum to 1."""
    shifted = scores - np.max(scores, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=axis, keepdims=True)


@dataclass(frozen=True)
class AttentionWeights:
    """Single-head projection matrices: queries/keys (d→d_k), values (d→d_v), output (d_v→d)."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    def __post_init__(self):
        for name in ("wq", "wk", "wv", "wo"):
            object.__setattr__(self, name, _as_finite_f64(name, getattr(self, name), 2))
        d, d_k = self.wq.shape
        if self.wk.shape != (d, d_k):
            raise DimMismatch(f"wk shape {self.wk.shape} != wq shape {(d, d_k)}")
        if self.wv.shape[0] != d:
            raise DimMismatch(f"wv input dim {self.wv.shape[0]} != {d}")
        d_v = self.wv.shape[1]
        if self.wo.shape != (d_v, d):
            raise DimMismatch(f"wo shape {self.wo.shape} != ({d_v}, {d})")

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    @classmethod
    def random(cls, dim: int, d_k: int | None = None, rng: np.random.Generator | None = None):
        """Small random weights for tests and oracle fixtures."""
        if rng is None:
            rng = np.random.default_rng(0)
        d_k = d_k or dim
        scale = 1.0 / np.sqrt(dim)
        return cls(
            wq=rng.standard_normal((dim, d_k)) * scale,
            wk=rng.standard_normal((dim, d_k)) * scale,
            wv=rng.standard_normal((dim, d_k)) * scale,
            wo=rng.standard_normal((d_k, dim)) * scale,
        )


def cross_attention(queries_in, keys_in, weights: AttentionWeights) -> np.ndarray:
    """Plain single-head cross attention block: softmax(QKᵀ/√d_k)V·Wo."""
    queries_in = _as_finite_f64("queries", queries_in, 2)
    keys_in = _as_finite_f64("keys", keys_in, 2)
    if queries_in.shape[1] != weights.dim:
        raise DimMismatch(f"query dim {queries_in.shape[1]} != weight dim {weights.dim}")
    if keys_in.shape[1] != weights.dim:
        raise DimMismatch(f"key dim {keys_in.shape[1]} != weight dim {weights.dim}")
    q = queries_in @ weights.wq
    k = keys_in @ weights.wk
    v = keys_in @ weights.wv
    scores = (q @ k.T) / np.sqrt(q.shape[1])
    return stable_softmax(scores, axis=-1) @ v @ weights.wo


def perceiver_resample(visual, latents, weights: AttentionWeights) -> np.ndarray:
    """Fixed-size read of a variable token set: latents + CrossAttn(latents→visual).

    Output shape is (L, d) whatever the visual token count. Without
    position embeddings the read is permutation-invariant in the visual
    tokens (softmax-weighted sum); adding distinct temporal rows first is
    what makes frame order observable.
    """
    visual = _as_finite_f64("visual", visual, 2)
    latents = _as_finite_f64("latents", latents, 2)
    return latents + cross_attention(latents, visual, weights)


def gated_cross_attention(text, visual, gate: float, weights: AttentionWeights) -> np.ndarray:
    """text + tanh(gate) · CrossAttn(text→visual); exact identity at gate 0."""
    text = _as_finite_f64("text", text, 2)
    visual = _as_finite_f64("visual", visual, 2)
    if gate == 0.0:
        # tanh(0) is exactly 0; skip the attention read so the identity
        # holds bit-for-bit, not just within floating error.
        return text.copy()
    return text + np.tanh(gate) * cross_attention(text, visual, weights)


@dataclass(frozen=True)
class LoraAdapter:
    """Low-rank delta (alpha/r)·B·A added to a frozen linear map."""

    a: np.ndarray
    b: np.ndarray
    alpha: float
    r: int

    def __post_init__(self):
        object.__setattr__(self, "a", _as_finite_f64("A", self.a, 2))
        object.__setattr__(self, "b", _as_finite_f64("B", self.b, 2))
        if self.r < 1:
            raise ValueError(f"rank must be >= 1, got {self.r}")
        if self.a.shape[0] != self.r or self.b.shape[1] != self.r:
            raise DimMismatch(
                f"rank {self.r} inconsistent with A {self.a.shape} / B {self.b.shape}"
            )
        d_in, d_out = self.a.shape[1], self.b.shape[0]
        if self.r > min(d_in, d_out):
            raise ValueError(f"rank {self.r} exceeds min(d_in={d_in}, d_out={d_out})")


def lora_delta(x, adapter: LoraAdapter) -> np.ndarray:
    """(alpha/r) · B · (A · x) — linear in x."""
    x = _as_finite_f64("x", x, 1)
    if x.shape[0] != adapter.a.shape[1]:
        raise DimMismatch(f"x dim {x.shape[0]} != adapter d_in {adapter.a.shape[1]}")
    return (adapter.alpha / adapter.r) * (adapter.b @ (adapter.a @ x))


def lora_forward(x, w, adapter: LoraAdapter) -> np.ndarray:
    """W·x + (alpha/r)·B·(A·x). Equals W·x exactly when B is zero."""
    x = _as_finite_f64("x", x, 1)
    w = _as_finite_f64("W", w, 2)
    if w.shape[1] != x.shape[0]:
        raise DimMismatch(f"W shape {w.shape} incompatible with x dim {x.shape[0]}")
    if w.shape[0] != adapter.b.shape[0]:
        raise DimMismatch(f"W output dim {w.shape[0]} != adapter d_out {adapter.b.shape[0]}")
    return w @ x + lora_delta(x, adapter)
