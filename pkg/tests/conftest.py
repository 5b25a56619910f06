from __future__ import annotations

import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from semcache_testgen import HashingEmbedder  # noqa: E402


@pytest.fixture
def embedder() -> HashingEmbedder:
    return HashingEmbedder()


class StubServer:
    """Local HTTP server speaking the embeddings / chat / score wire formats.

    ``failures[path]`` is a list of HTTP statuses returned, in order, before
    the path starts answering normally. ``requests[path]`` records bodies.
    """

    def __init__(self) -> None:
        self.failures: dict[str, list[int]] = {}
        self.requests: dict[str, list[dict]] = {}
        self.dim = 8
        self.chat_reply = '["ok"]'
        self.embed_dim_override: int | None = None
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # keep pytest output quiet
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                stub.requests.setdefault(self.path, []).append(
                    {"body": body, "auth": self.headers.get("Authorization")}
                )
                pending = stub.failures.get(self.path)
                if pending:
                    self._send(pending.pop(0), {"error": "injected"})
                    return
                if self.path == "/v1/embeddings":
                    dim = stub.embed_dim_override or stub.dim
                    data = [
                        {"index": i, "embedding": [float(len(t) + j) for j in range(dim)]}
                        for i, t in enumerate(body["input"])
                    ]
                    self._send(200, {"object": "list", "data": list(reversed(data))})
                elif self.path == "/v1/chat/completions":
                    self._send(200, {"choices": [{"index": 0, "message": {"role": "assistant", "content": stub.chat_reply}}]})
                elif self.path == "/score":
                    scores = [1.0 if c == body["query"] else 0.25 for c in body["candidates"]]
                    self._send(200, {"scores": scores})
                else:
                    self._send(404, {"error": "not found"})

            def _send(self, status, payload):
                raw = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(raw)))
                self.end_headers()
                self.wfile.write(raw)

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    def count(self, path: str) -> int:
        return len(self.requests.get(path, []))

    def close(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def stub_server():
    server = StubServer()
    yield server
    server.close()


# -- acceptance summary ------------------------------------------------------

_CRITERIA: dict[str, str] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rpartition("::")[2].partition("[")[0]
    if not name.startswith("test_criterion_"):
        return
    if report.when == "call" or report.outcome != "passed":
        # parametrized criteria pass only if every case passes
        failed = _CRITERIA.get(name) == "FAIL" or report.outcome != "passed"
        _CRITERIA[name] = "FAIL" if failed else "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in sorted(_CRITERIA.items(), key=lambda kv: int(kv[0].split("_")[2])):
        number, _, label = name[len("test_criterion_"):].partition("_")
        terminalreporter.write_line(f"{status}  criterion {number}: {label.replace('_', ' ')}")
