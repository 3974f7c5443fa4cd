"""HTTP JSON inference service and the shared chat entry point.

Endpoints:
    POST /chat    {"question": str, "max_steps"?: int} -> answer payload
    GET  /health  liveness plus the served model tag
    GET  /info    config summary, vocab size, last recorded evaluation BLEU
    GET  /...     static web UI bundle, when a bundle directory is configured

The service holds one immutable checkpoint; handlers run concurrently and
only touch shared state through the atomic request counter. Request bodies
over 8 KiB are rejected with 413.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import threading
import time
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

from .decoding import InferenceSession

MAX_BODY_BYTES = 8192

log = logging.getLogger("qabot.service")


class ChatService:
    """Inference facade shared by the HTTP handlers and the terminal chat loop."""

    def __init__(
        self,
        session: InferenceSession,
        static_dir: Optional[str] = None,
        eval_report: Optional[dict] = None,
    ):
        self.session = session
        self.static_dir = Path(static_dir).resolve() if static_dir else None
        self.eval_report = eval_report
        self.started = time.monotonic()
        self._requests = 0
        self._lock = threading.Lock()

    def count_request(self) -> int:
        with self._lock:
            self._requests += 1
            return self._requests

    @property
    def request_count(self) -> int:
        with self._lock:
            return self._requests

    def chat(self, question: str, max_steps: Optional[int] = None) -> dict:
        start = time.perf_counter()
        result = self.session.answer(question, max_steps)
        latency_ms = (time.perf_counter() - start) * 1000.0
        self.count_request()
        log.info(
            "chat latency_ms=%.2f tokens=%d", latency_ms, len(result.token_ids)
        )
        return {
            "answer": result.answer,
            "token_ids": result.token_ids,
            "latency_ms": latency_ms,
            "model": self.session.model_tag,
        }

    def health(self) -> dict:
        return {
            "status": "ok",
            "model": self.session.model_tag,
            "uptime_s": time.monotonic() - self.started,
        }

    def info(self) -> dict:
        cfg = self.session.config
        bleu_score = None
        if self.eval_report and "bleu" in self.eval_report:
            bleu_score = self.eval_report["bleu"]
        return {
            "model": self.session.model_tag,
            "family": self.session.checkpoint.family,
            "vocab_size": self.session.vocab.size,
            "config": cfg.to_json_dict(),
            "bleu": bleu_score,
            "requests": self.request_count,
        }


class _ChatHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "qabot"

    @property
    def service(self) -> ChatService:
        return self.server.service  # type: ignore[attr-defined]

    def log_message(self, fmt, *args):  # route access logs through logging
        log.debug("%s %s", self.address_string(), fmt % args)

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        if status >= 400:
            # the request body may be partially unread; do not reuse the socket
            self.send_header("Connection", "close")
            self.close_connection = True
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        if self.path.rstrip("/") != "/chat":
            self._send_json(404, {"error": f"no such endpoint: {self.path}"})
            return
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_BODY_BYTES:
            self._send_json(413, {"error": f"request body over {MAX_BODY_BYTES} bytes"})
            return
        raw = self.rfile.read(length)
        try:
            payload = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            self._send_json(400, {"error": f"malformed JSON body: {exc}"})
            return
        if not isinstance(payload, dict) or not isinstance(payload.get("question"), str):
            self._send_json(400, {"error": 'body must be a JSON object with a string "question"'})
            return
        max_steps = payload.get("max_steps")
        if max_steps is not None and (not isinstance(max_steps, int) or max_steps < 1):
            self._send_json(400, {"error": '"max_steps" must be a positive integer'})
            return
        try:
            self._send_json(200, self.service.chat(payload["question"], max_steps))
        except Exception:
            failure_id = uuid.uuid4().hex[:12]
            log.exception("chat request failed (id=%s)", failure_id)
            self._send_json(500, {"error": "internal error", "id": failure_id})

    def do_GET(self):
        path = self.path.split("?", 1)[0]
        if path == "/health":
            self._send_json(200, self.service.health())
        elif path == "/info":
            self._send_json(200, self.service.info())
        else:
            self._serve_static(path)

    def _serve_static(self, path: str) -> None:
        root = self.service.static_dir
        if root is None or not root.is_dir():
            self._send_json(404, {"error": "no web UI bundle configured"})
            return
        relative = path.lstrip("/") or "index.html"
        target = (root / relative).resolve()
        if root not in target.parents and target != root:
            self._send_json(404, {"error": "not found"})
            return
        if target.is_dir():
            target = target / "index.html"
        if not target.is_file():
            self._send_json(404, {"error": "not found"})
            return
        content_type = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        body = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


def make_server(service: ChatService, host: str, port: int) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), _ChatHandler)
    server.daemon_threads = True
    server.service = service  # type: ignore[attr-defined]
    return server


def serve_in_background(service: ChatService, host: str = "127.0.0.1", port: int = 0):
    """Start the server on a daemon thread; returns (server, bound port)."""
    server = make_server(service, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, server.server_address[1]
