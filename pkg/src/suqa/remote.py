"""JSON-over-HTTP client and stub server for model-backed scorers.

Request body::

    {"id": ..., "kind": "acceptability" | "answer_oracle",
     "question": ..., "text": ..., "context": ...}

Response body is ``{"score": float}`` for acceptability and
``{"answer": str}`` for the answer oracle; an ``id`` is echoed back when
the client sent one.
"""

from __future__ import annotations

import itertools
import json
import logging
import threading
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable

from suqa.errors import ProtocolError, RewardUnavailable

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0

_ids = itertools.count(1)
_ids_lock = threading.Lock()


def _next_id() -> int:
    with _ids_lock:
        return next(_ids)


def post_json(endpoint: str, payload: dict[str, Any], timeout: float = DEFAULT_TIMEOUT) -> dict[str, Any]:
    req_id = _next_id()
    body = dict(payload, id=req_id)
    data = json.dumps(body).encode("utf-8")
    req = urllib.request.Request(
        endpoint, data=data, headers={"Content-Type": "application/json"}, method="POST"
    )
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            raw = resp.read()
    except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
        raise RewardUnavailable(f"scorer at {endpoint} unreachable: {exc}") from exc
    try:
        out = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"scorer at {endpoint} returned non-JSON body") from exc
    if not isinstance(out, dict):
        raise ProtocolError(f"scorer at {endpoint} returned {type(out).__name__}, expected object")
    if "id" in out and out["id"] != req_id:
        raise ProtocolError(f"response id {out['id']!r} does not match request id {req_id}")
    return out


def request_score(endpoint: str, text: str, timeout: float = DEFAULT_TIMEOUT) -> float:
    out = post_json(endpoint, {"kind": "acceptability", "text": text}, timeout)
    score = out.get("score")
    if isinstance(score, bool) or not isinstance(score, (int, float)):
        raise ProtocolError(f"missing or non-numeric 'score' in {out!r}")
    score = float(score)
    if not 0.0 <= score <= 1.0:
        raise ProtocolError(f"score {score} outside [0, 1]")
    return score


def request_answer(endpoint: str, question: str, explanation: str, timeout: float = DEFAULT_TIMEOUT) -> str:
    payload = {"kind": "answer_oracle", "question": question, "text": explanation, "context": explanation}
    out = post_json(endpoint, payload, timeout)
    answer = out.get("answer")
    if not isinstance(answer, str):
        raise ProtocolError(f"missing or non-string 'answer' in {out!r}")
    return answer


# ---------------------------------------------------------------- stub server


def _default_answer(question: str, text: str) -> str:
    from suqa.oracles import span_matcher_answer

    return span_matcher_answer(question, text)


class _Handler(BaseHTTPRequestHandler):
    server: "StubServer"

    def log_message(self, fmt, *args):  # noqa: D401 - silence default stderr logging
        logger.debug(fmt, *args)

    def do_POST(self):  # noqa: N802
        length = int(self.headers.get("Content-Length", 0))
        try:
            req = json.loads(self.rfile.read(length).decode("utf-8"))
        except json.JSONDecodeError:
            self.send_error(400, "bad json")
            return
        kind = req.get("kind")
        if kind == "acceptability":
            out: dict[str, Any] = {"score": self.server.score_fn(req.get("text", ""))}
        else:
            out = {"answer": self.server.answer_fn(req.get("question", ""), req.get("context", req.get("text", "")))}
        if "id" in req:
            out["id"] = req["id"]
        data = json.dumps(out).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


class StubServer(ThreadingHTTPServer):
    """Tiny local scorer/oracle used by the CLI ``serve-stub`` and tests."""

    daemon_threads = True

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 0,
        score_fn: Callable[[str], float] | None = None,
        answer_fn: Callable[[str, str], str] | None = None,
    ):
        super().__init__((host, port), _Handler)
        self.score_fn = score_fn or (lambda text: 1.0)
        self.answer_fn = answer_fn or _default_answer
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}/"

    def start(self) -> "StubServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
