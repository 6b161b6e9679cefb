"""Chat-completion clients: live HTTP, replay fixtures, and caching.

The live client POSTs ``{"model": ..., "messages": [{"role", "content"}]}``
and reads the first choice's message content. Credentials come from the
``GCOT_LLM_API_KEY`` environment variable only. Replay mode serves replies
from a JSONL fixture of ``{"prompt_hash", "reply"}`` so pipelines run
hermetically and deterministically.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import LlmUnavailable

API_KEY_ENV = "GCOT_LLM_API_KEY"

Message = dict[str, str]


@dataclass(frozen=True)
class RetryPolicy:
    """``max_retries`` is on top of the first attempt."""

    max_retries: int = 2


def prompt_hash(messages: Sequence[Message]) -> str:
    """Stable hex digest of a message list, used as cache and replay key."""
    canonical = json.dumps(
        [{"content": m["content"], "role": m["role"]} for m in messages],
        separators=(",", ":"),
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class LlmClient:
    """Interface: ``complete(messages) -> reply text``."""

    model: str = "unknown"

    def complete(self, messages: Sequence[Message]) -> str:
        raise NotImplementedError


class HttpLlmClient(LlmClient):
    def __init__(self, endpoint: str, model: str, timeout: float = 60.0):
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout

    def complete(self, messages: Sequence[Message]) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {"model": self.model, "messages": list(messages)}
        try:
            response = requests.post(
                self.endpoint, json=payload, headers=headers, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise LlmUnavailable(f"request to {self.endpoint} failed: {exc}") from exc
        if response.status_code != 200:
            raise LlmUnavailable(f"{self.endpoint} returned HTTP {response.status_code}")
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise LlmUnavailable(f"malformed completion payload: {exc}") from exc


class ReplayLlmClient(LlmClient):
    """Serves canned replies keyed by prompt hash from a JSONL fixture."""

    def __init__(self, fixture: str | Path | dict[str, str], model: str = "replay"):
        self.model = model
        if isinstance(fixture, dict):
            self._replies = dict(fixture)
        else:
            self._replies = {}
            try:
                text = Path(fixture).read_text(encoding="utf-8")
            except OSError as exc:
                raise LlmUnavailable(f"cannot read replay fixture {fixture}: {exc}") from exc
            for line in text.splitlines():
                if not line.strip():
                    continue
                obj = json.loads(line)
                self._replies[obj["prompt_hash"]] = obj["reply"]

    def complete(self, messages: Sequence[Message]) -> str:
        key = prompt_hash(messages)
        try:
            return self._replies[key]
        except KeyError:
            raise LlmUnavailable(f"no replay entry for prompt hash {key}") from None


class ScriptedLlmClient(LlmClient):
    """Test double that plays back a fixed script of replies or exceptions."""

    def __init__(self, script: Iterable[str | Exception], model: str = "scripted"):
        self.model = model
        self._script = list(script)
        self.calls = 0

    def complete(self, messages: Sequence[Message]) -> str:
        if self.calls >= len(self._script):
            raise LlmUnavailable("script exhausted")
        item = self._script[self.calls]
        self.calls += 1
        if isinstance(item, Exception):
            raise item
        return item


class CallableLlmClient(LlmClient):
    """Adapter turning a plain function into a client (handy in tests)."""

    def __init__(self, fn: Callable[[Sequence[Message]], str], model: str = "callable"):
        self.model = model
        self._fn = fn

    def complete(self, messages: Sequence[Message]) -> str:
        return self._fn(messages)


class CachedLlmClient(LlmClient):
    """Caches replies keyed by (prompt hash, model id); thread-safe.

    With ``cache_path`` set, hits survive process restarts: misses are
    appended to the JSONL file and prior entries are loaded at startup.
    """

    def __init__(self, inner: LlmClient, cache_path: str | Path | None = None):
        self.inner = inner
        self.model = inner.model
        self.cache_path = Path(cache_path) if cache_path is not None else None
        self._lock = threading.Lock()
        self._cache: dict[tuple[str, str], str] = {}
        self.hits = 0
        self.misses = 0
        if self.cache_path is not None and self.cache_path.exists():
            for line in self.cache_path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                obj = json.loads(line)
                self._cache[(obj["prompt_hash"], obj["model"])] = obj["reply"]

    def complete(self, messages: Sequence[Message]) -> str:
        key = (prompt_hash(messages), self.model)
        with self._lock:
            if key in self._cache:
                self.hits += 1
                return self._cache[key]
        reply = self.inner.complete(messages)
        with self._lock:
            self.misses += 1
            self._cache[key] = reply
            if self.cache_path is not None:
                with open(self.cache_path, "a", encoding="utf-8") as fh:
                    fh.write(
                        json.dumps(
                            {"prompt_hash": key[0], "model": key[1], "reply": reply}
                        )
                        + "\n"
                    )
        return reply


def map_concurrent(fn: Callable, items: Iterable, max_concurrency: int = 4) -> list:
    """Apply ``fn`` to items with at most ``max_concurrency`` in flight.

    Results come back in input order. ``fn`` must capture its own errors
    if partial failure should not abort the batch.
    """
    items = list(items)
    if max_concurrency <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
        return list(pool.map(fn, items))
