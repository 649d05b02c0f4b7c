"""Stub step-generation service for integration tests.

Speaks the plain-text ``/step`` protocol: the POST body is an encoded
context (``hypothesis: ...;`` then a premise block and history clauses) and
the reply is exactly one proof clause. Template mode derives the clause
from the request text alone; echo mode always sends the same clause. No
tree or metric logic lives here, only string work.
"""

from __future__ import annotations

import http.server
import re
import threading

ECHO_CLAUSE = "sent1 & sent2 -> int1: echoed conclusion;"
MODES = ("echo", "template")

_TOKEN = re.compile(r"\b(?:sent|int)\d+\b")
_PREMISE_SPLIT = re.compile(r"\s*\b(sent\d+):\s*")
_INT_NUMBER = re.compile(r"\bint(\d+)\b")


class BindError(Exception):
    """The requested port cannot be bound."""


class MalformedContextError(ValueError):
    """The request body is not a usable encoded context."""


def derive_template_step(body: str) -> str:
    """Build the next clause from an encoded context.

    Combines the first two usable nodes into a fresh intermediate; with one
    node left, concludes the hypothesis from it.
    """
    clauses = [c.strip() for c in body.split(";") if c.strip()]
    if not clauses or not clauses[0].startswith("hypothesis:"):
        raise MalformedContextError("context must open with a hypothesis clause")

    texts: dict[str, str] = {}
    order: list[str] = []
    consumed: set[str] = set()
    int_numbers = [0]
    for clause in clauses[1:]:
        if "->" in clause:
            left, _, right = clause.partition("->")
            consumed.update(_TOKEN.findall(left))
            token, _, text = right.strip().partition(":")
            token = token.strip()
            if token.startswith("int"):
                texts[token] = text.strip()
                order.append(token)
            int_numbers.extend(int(m) for m in _INT_NUMBER.findall(clause))
        else:
            parts = _PREMISE_SPLIT.split(clause)
            if len(parts) < 3 or parts[0].strip():
                raise MalformedContextError(f"unrecognized block: {clause[:60]!r}")
            for token, text in zip(parts[1::2], parts[2::2]):
                texts[token] = text.strip()
                order.append(token)

    usable = [token for token in order if token not in consumed]
    if not usable:
        raise MalformedContextError("no usable nodes in context")
    if len(usable) == 1:
        return f"{usable[0]} -> hypothesis;"
    first, second = usable[0], usable[1]
    fresh = max(int_numbers) + 1
    return f"{first} & {second} -> int{fresh}: {texts[first]} and {texts[second]};"


class _StepHandler(http.server.BaseHTTPRequestHandler):
    mode = "template"

    def _reply(self, status: int, text: str) -> None:
        payload = text.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "text/plain; charset=utf-8")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def do_POST(self) -> None:
        if self.path != "/step":
            self._reply(404, "unknown path; POST /step")
            return
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        try:
            body = raw.decode("utf-8")
        except UnicodeDecodeError:
            self._reply(400, "body is not valid UTF-8")
            return
        if not body.strip():
            self._reply(400, "empty context")
            return
        if self.mode == "echo":
            self._reply(200, ECHO_CLAUSE)
            return
        try:
            self._reply(200, derive_template_step(body))
        except MalformedContextError as exc:
            self._reply(400, str(exc))

    def do_GET(self) -> None:
        self._reply(405, "POST /step with an encoded context")

    def log_message(self, *args) -> None:
        pass


class StubServer:
    """A running stub service; close() stops it."""

    def __init__(self, server: http.server.HTTPServer, thread: threading.Thread):
        self._server = server
        self._thread = thread
        self.port = server.server_port
        self.endpoint = f"http://127.0.0.1:{self.port}"

    def close(self) -> None:
        self._server.shutdown()
        self._thread.join()
        self._server.server_close()

    def wait(self) -> None:
        """Block until the server thread exits; KeyboardInterrupt closes it."""
        try:
            while self._thread.is_alive():
                self._thread.join(1.0)
        except KeyboardInterrupt:
            self.close()


def serve_generator(port: int, mode: str = "template", host: str = "127.0.0.1") -> StubServer:
    """Start the stub service on ``port`` (0 picks a free one)."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    handler = type("_Bound", (_StepHandler,), {"mode": mode})
    try:
        server = http.server.HTTPServer((host, port), handler)
    except OSError as exc:
        raise BindError(f"cannot bind {host}:{port}: {exc}") from exc
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return StubServer(server, thread)
