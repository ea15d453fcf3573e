"""Minimal HTTP binding for the publication server.

Four stateless endpoints, binary bodies, no cookies, no per-client
identifiers:

    POST /v1/upload          upload message -> 200 credential / 403 / 400
    GET  /v1/niid?since_day=N -> binary published + revocation list
    POST /v1/revoke          credential -> 200 / 404
    GET  /v1/stats           -> JSON aggregates
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .server import TraceServer


def _now_minute() -> int:
    return int(time.time() // 60)


class _Handler(BaseHTTPRequestHandler):
    server_version = "tracekit/0.1"
    trace_server: TraceServer = None  # set by make_http_server

    def log_message(self, fmt, *args):  # no request logging: no metadata trail
        pass

    def _reply(self, status: int, body: bytes, content_type: str = "application/octet-stream"):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length", "0"))
        return self.rfile.read(length)

    def do_POST(self):
        path = urlparse(self.path).path
        if path == "/v1/upload":
            accepted, credential = self.trace_server.accept_upload(
                self._body(), None, _now_minute()
            )
            if accepted:
                self._reply(200, credential)
            else:
                self._reply(403, b"")
        elif path == "/v1/revoke":
            ok = self.trace_server.revoke(self._body(), _now_minute() // 1440)
            self._reply(200 if ok else 404, b"")
        else:
            self._reply(404, b"")

    def do_GET(self):
        parsed = urlparse(self.path)
        if parsed.path == "/v1/niid":
            qs = parse_qs(parsed.query)
            try:
                since_day = int(qs.get("since_day", ["0"])[0])
            except ValueError:
                self._reply(400, b"")
                return
            body = self.trace_server.publish_delta_message(since_day, _now_minute() // 1440)
            self._reply(200, body)
        elif parsed.path == "/v1/stats":
            body = json.dumps(self.trace_server.publish_statistics(), sort_keys=True).encode()
            self._reply(200, body, "application/json")
        else:
            self._reply(404, b"")


def make_http_server(trace_server: TraceServer, port: int = 0) -> ThreadingHTTPServer:
    """Bind the endpoints; port 0 picks a free port (see ``server_port``)."""
    handler = type("BoundHandler", (_Handler,), {"trace_server": trace_server})
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def serve_in_thread(trace_server: TraceServer, port: int = 0):
    """Start serving on a daemon thread; returns (httpd, port)."""
    httpd = make_http_server(trace_server, port)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    return httpd, httpd.server_address[1]
