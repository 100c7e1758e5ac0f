"""Uniform client for chat-completion and embedding endpoints.

One Gateway wraps one backend and enforces the shared contracts: retry with
jittered exponential backoff, write-once response caching keyed by request
digest, and bounded parallelism for batch callers. The mock backend makes
every pipeline stage runnable offline and bit-reproducibly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence, TypeVar

import numpy as np
import requests

from .errors import (
    ConfigError,
    ProtocolError,
    SchemaError,
    TransientBackendError,
    TransportError,
)
from .io_utils import atomic_write_text, canonical_json, sha256_text

logger = logging.getLogger(__name__)

MOCK_EMBED_DIM = 64
RETRYABLE_STATUS = (429, 500, 502, 503, 504)

T = TypeVar("T")


@dataclass
class ChatRequest:
    model: str
    messages: list[dict[str, str]]
    temperature: float = 0.0
    max_tokens: int = 256
    seed: int | None = None

    def __post_init__(self):
        if not self.messages:
            raise SchemaError("chat request needs at least one message")
        for m in self.messages:
            if not isinstance(m.get("role"), str) or not isinstance(m.get("content"), str):
                raise SchemaError(f"malformed message {m!r}")
        if not math.isfinite(self.temperature) or self.temperature < 0:
            raise SchemaError(f"temperature must be finite and >= 0, got {self.temperature!r}")
        if self.max_tokens <= 0:
            raise SchemaError(f"max_tokens must be positive, got {self.max_tokens!r}")


@dataclass
class EmbeddingVector:
    values: np.ndarray
    model_id: str
    text_hash: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size == 0:
            raise SchemaError("embedding must be a non-empty 1-D vector")
        if not np.all(np.isfinite(self.values)):
            raise SchemaError("embedding has non-finite components")

    @property
    def dim(self) -> int:
        return int(self.values.size)


def cache_key(req: ChatRequest) -> str:
    """Digest over the canonicalized request; stable across runs and platforms."""
    payload = {
        "kind": "chat",
        "model": req.model,
        "messages": [{"role": m["role"], "content": m["content"]} for m in req.messages],
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
        "seed": req.seed,
    }
    return sha256_text(canonical_json(payload))


def embedding_cache_key(model: str, text: str) -> str:
    payload = {"kind": "embedding", "model": model, "text": text}
    return sha256_text(canonical_json(payload))


def mock_embedding(text: str, dim: int = MOCK_EMBED_DIM) -> np.ndarray:
    """Unit-norm vector seeded from the text hash; the normative mock contract."""
    seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
    v = np.random.default_rng(seed).standard_normal(dim)
    return v / np.linalg.norm(v)


class MockBackend:
    """Offline deterministic backend: hash-echo chat, seeded unit-norm embeddings."""

    def __init__(self, dim: int = MOCK_EMBED_DIM):
        self.dim = dim

    def chat(self, req: ChatRequest) -> dict:
        text = f"MOCK({cache_key(req)[:8]})"
        return {
            "object": "chat.completion",
            "model": req.model,
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": text},
                    "finish_reason": "stop",
                }
            ],
        }

    def embed(self, model: str, texts: Sequence[str]) -> dict:
        data = [
            {"object": "embedding", "index": i, "embedding": mock_embedding(t, self.dim).tolist()}
            for i, t in enumerate(texts)
        ]
        return {"object": "list", "model": model, "data": data}


class HttpBackend:
    """OpenAI-compatible HTTP backend; bearer token read from a named env var."""

    def __init__(self, base_url: str, api_key_env: str | None = None, timeout: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout = timeout

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if not key:
                raise ConfigError(f"API key environment variable {self.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, route: str, payload: dict) -> dict:
        url = f"{self.base_url}{route}"
        try:
            resp = requests.post(url, json=payload, headers=self._headers(), timeout=self.timeout)
        except (requests.Timeout, requests.ConnectionError) as exc:
            raise TransientBackendError(f"{url}: {exc}") from exc
        if resp.status_code in RETRYABLE_STATUS:
            raise TransientBackendError(f"{url}: HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise ProtocolError(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise ProtocolError(f"{url}: non-JSON response") from exc

    def chat(self, req: ChatRequest) -> dict:
        payload: dict[str, Any] = {
            "model": req.model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.seed is not None:
            payload["seed"] = req.seed
        return self._post("/v1/chat/completions", payload)

    def embed(self, model: str, texts: Sequence[str]) -> dict:
        return self._post("/v1/embeddings", {"model": model, "input": list(texts)})


def make_backend(base_url: str, api_key_env: str | None = None, *, dim: int = MOCK_EMBED_DIM, timeout: float = 60.0):
    if base_url.startswith("mock"):
        return MockBackend(dim=dim)
    return HttpBackend(base_url, api_key_env, timeout=timeout)


class DiskCache:
    """One file per key, filename = key, content = raw response JSON.

    Write-once per key; access serialized per key so concurrent callers of
    the same request issue at most one backend call each.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def _lock_for(self, key: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(key, threading.Lock())

    def get_or_compute(self, key: str, compute: Callable[[], dict]) -> tuple[dict, bool]:
        """Returns (value, hit). `compute` runs only on a miss."""
        path = self.root / key
        with self._lock_for(key):
            if path.exists():
                return json.loads(path.read_text(encoding="utf-8")), True
            value = compute()
            atomic_write_text(path, json.dumps(value, ensure_ascii=False, sort_keys=True))
            return value, False


def _extract_chat_content(raw: dict) -> str:
    try:
        content = raw["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(f"malformed chat response: {raw!r}") from exc
    if not isinstance(content, str) or not content.strip():
        raise ProtocolError("empty assistant content")
    return content


class Gateway:
    """Shared endpoint client enforcing retry, cache, and concurrency contracts."""

    def __init__(
        self,
        backend,
        *,
        cache_dir: str | Path | None = None,
        max_attempts: int = 5,
        backoff_base: float = 0.5,
        concurrency: int = 4,
        rng: random.Random | None = None,
    ):
        self.backend = backend
        self.cache = DiskCache(cache_dir) if cache_dir else None
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.concurrency = concurrency
        self._rng = rng or random.Random()
        self._dims: dict[str, int] = {}
        self._dims_guard = threading.Lock()

    def _retrying(self, call: Callable[[], dict], what: str) -> dict:
        for attempt in range(1, self.max_attempts + 1):
            try:
                return call()
            except TransientBackendError as exc:
                if attempt == self.max_attempts:
                    raise TransportError(
                        f"{what} failed after {attempt} attempts: {exc}"
                    ) from exc
                delay = self.backoff_base * (2 ** (attempt - 1)) * (0.5 + self._rng.random())
                logger.warning(
                    "%s: transient failure on attempt %d/%d, retrying in %.2fs (%s)",
                    what, attempt, self.max_attempts, delay, exc,
                )
                if delay > 0:
                    time.sleep(delay)
        raise AssertionError("unreachable")

    def chat(self, req: ChatRequest) -> str:
        """Assistant text for a chat request; cached under the request digest."""
        key = cache_key(req)

        def fetch() -> dict:
            raw = self._retrying(lambda: self.backend.chat(req), f"chat {key[:8]}")
            _extract_chat_content(raw)  # validate before the cache keeps it
            return raw

        if self.cache is not None:
            raw, _ = self.cache.get_or_compute(key, fetch)
        else:
            raw = fetch()
        return _extract_chat_content(raw)

    def _check_dim(self, model: str, dim: int) -> None:
        with self._dims_guard:
            known = self._dims.setdefault(model, dim)
        if known != dim:
            raise ProtocolError(f"embedding dimension changed for {model}: {known} -> {dim}")

    def embed(self, texts: Sequence[str], model: str) -> list[EmbeddingVector]:
        """Embed texts in order; per-text cache keyed by (model, text hash)."""
        if not texts:
            return []
        for t in texts:
            if not isinstance(t, str) or not t:
                raise SchemaError("embed requires non-empty strings")

        out: list[EmbeddingVector | None] = [None] * len(texts)
        missing: list[int] = []
        if self.cache is not None:
            for i, text in enumerate(texts):
                key = embedding_cache_key(model, text)
                path = self.cache.root / key
                if path.exists():
                    entry = json.loads(path.read_text(encoding="utf-8"))
                    out[i] = self._vector(entry["embedding"], model, texts[i])
                else:
                    missing.append(i)
        else:
            missing = list(range(len(texts)))

        if missing:
            batch = [texts[i] for i in missing]
            raw = self._retrying(lambda: self.backend.embed(model, batch), f"embed x{len(batch)}")
            vectors = self._parse_embed_response(raw, len(batch))
            for i, values in zip(missing, vectors):
                if self.cache is not None:
                    key = embedding_cache_key(model, texts[i])
                    entry, _ = self.cache.get_or_compute(
                        key, lambda v=values: {"model": model, "embedding": v}
                    )
                    values = entry["embedding"]
                out[i] = self._vector(values, model, texts[i])
        return [v for v in out if v is not None]

    def _vector(self, values: list[float], model: str, text: str) -> EmbeddingVector:
        vec = EmbeddingVector(values=np.asarray(values, dtype=np.float64), model_id=model,
                              text_hash=sha256_text(text))
        self._check_dim(model, vec.dim)
        return vec

    @staticmethod
    def _parse_embed_response(raw: dict, expected: int) -> list[list[float]]:
        try:
            data = sorted(raw["data"], key=lambda d: d["index"])
            vectors = [d["embedding"] for d in data]
        except (KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed embedding response: {raw!r}") from exc
        if len(vectors) != expected:
            raise ProtocolError(f"expected {expected} embeddings, got {len(vectors)}")
        dims = {len(v) for v in vectors}
        if len(dims) != 1:
            raise ProtocolError(f"mixed embedding dimensions in one batch: {sorted(dims)}")
        return vectors


def parallel_map(
    fn: Callable[[Any], T],
    items: Sequence[Any],
    concurrency: int,
) -> tuple[list[T | None], list[tuple[int, str]]]:
    """Apply fn to every item with bounded parallelism.

    Results are merged by item index, so output order never depends on
    worker scheduling. Per-item exceptions become (index, message) failure
    entries instead of aborting the batch.
    """
    results: list[T | None] = [None] * len(items)
    failures: list[tuple[int, str]] = []
    if concurrency <= 1:
        for i, item in enumerate(items):
            try:
                results[i] = fn(item)
            except Exception as exc:
                failures.append((i, f"{type(exc).__name__}: {exc}"))
        return results, failures

    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        futures = {pool.submit(fn, item): i for i, item in enumerate(items)}
        for future, i in futures.items():
            try:
                results[i] = future.result()
            except Exception as exc:
                failures.append((i, f"{type(exc).__name__}: {exc}"))
    failures.sort(key=lambda pair: pair[0])
    return results, failures
