"""Test doubles: scripted backends and a fake OpenAI-compatible HTTP server."""

from __future__ import annotations

import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from synthdial.gateway import MockBackend, cache_key, mock_embedding


class ScriptedBackend:
    """Chat backend whose replies come from a user-supplied function.

    `reply_fn(req)` receives the ChatRequest and returns the assistant text.
    Embeddings fall through to the deterministic mock contract.
    """

    def __init__(self, reply_fn, dim: int = 64):
        self.reply_fn = reply_fn
        self.dim = dim
        self.chat_calls = 0

    def chat(self, req) -> dict:
        self.chat_calls += 1
        text = self.reply_fn(req)
        return {
            "object": "chat.completion",
            "model": req.model,
            "choices": [
                {"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}
            ],
        }

    def embed(self, model, texts) -> dict:
        data = [
            {"object": "embedding", "index": i, "embedding": mock_embedding(t, self.dim).tolist()}
            for i, t in enumerate(texts)
        ]
        return {"object": "list", "model": model, "data": data}


class CountingBackend(MockBackend):
    """Mock backend that tracks total calls and the concurrency high-water mark."""

    def __init__(self, dim: int = 64, delay: float = 0.0):
        super().__init__(dim=dim)
        self.delay = delay
        self.chat_calls = 0
        self.embed_calls = 0
        self._active = 0
        self.max_active = 0
        self._lock = threading.Lock()

    def _enter(self):
        with self._lock:
            self._active += 1
            self.max_active = max(self.max_active, self._active)

    def _exit(self):
        with self._lock:
            self._active -= 1

    def chat(self, req):
        self._enter()
        try:
            if self.delay:
                import time

                time.sleep(self.delay)
            with self._lock:
                self.chat_calls += 1
            return super().chat(req)
        finally:
            self._exit()

    def embed(self, model, texts):
        self._enter()
        try:
            with self._lock:
                self.embed_calls += 1
            return super().embed(model, texts)
        finally:
            self._exit()


class _Handler(BaseHTTPRequestHandler):
    server_version = "FakeOpenAI/0.1"

    def log_message(self, *args):  # keep test output clean
        pass

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length).decode("utf-8")
        server: FakeOpenAIServer = self.server.owner  # type: ignore[attr-defined]
        status, payload = server.handle(self.path, body)
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


class FakeOpenAIServer:
    """Scriptable OpenAI-compatible server for retry/fault-injection tests.

    - requests whose body contains `fail_marker` always get HTTP 429;
    - other requests get 429 for their first `flaky_429s` arrivals (tracked
      per distinct body) and succeed afterwards.
    Chat content is a digest echo of the body, so responses stay
    deterministic regardless of arrival order.
    """

    def __init__(self, fail_marker: str | None = None, flaky_429s: int = 0, dim: int = 8):
        self.fail_marker = fail_marker
        self.flaky_429s = flaky_429s
        self.dim = dim
        self.attempts: dict[str, int] = {}
        self.requests_seen = 0
        self._lock = threading.Lock()
        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
        self._httpd.owner = self  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    def start(self) -> "FakeOpenAIServer":
        self._thread.start()
        return self

    def close(self):
        self._httpd.shutdown()
        self._httpd.server_close()

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address
        return f"http://{host}:{port}"

    def handle(self, path: str, body: str):
        digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
        with self._lock:
            self.requests_seen += 1
            seen = self.attempts.get(digest, 0)
            self.attempts[digest] = seen + 1
        if self.fail_marker and self.fail_marker in body:
            return 429, {"error": {"message": "scripted failure"}}
        if seen < self.flaky_429s:
            return 429, {"error": {"message": "scripted rate limit"}}
        if path == "/v1/chat/completions":
            payload = json.loads(body)
            return 200, {
                "object": "chat.completion",
                "model": payload.get("model", ""),
                "choices": [
                    {
                        "index": 0,
                        "message": {"role": "assistant", "content": f"SRV({digest[:8]})"},
                        "finish_reason": "stop",
                    }
                ],
            }
        if path == "/v1/embeddings":
            payload = json.loads(body)
            texts = payload["input"]
            data = [
                {"object": "embedding", "index": i, "embedding": mock_embedding(t, self.dim).tolist()}
                for i, t in enumerate(texts)
            ]
            return 200, {"object": "list", "model": payload.get("model", ""), "data": data}
        return 404, {"error": {"message": f"no route {path}"}}


def chat_hash_reply(req) -> str:
    """Mirror of the mock backend's hash-echo contract, for expectations."""
    return f"MOCK({cache_key(req)[:8]})"
