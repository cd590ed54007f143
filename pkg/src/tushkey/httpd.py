"""Minimal JSON-over-HTTP dispatch shared by both servers.

A JsonApp maps (method, path) to handlers that receive a RequestContext
and return a dict. The same dispatch entry point serves the in-memory
transport and the threaded loopback HTTP server, so behavior cannot drift
between the two.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional
from urllib.parse import parse_qsl, urlsplit

logger = logging.getLogger(__name__)


class ApiError(Exception):
    def __init__(self, status: int, code: str) -> None:
        super().__init__(code)
        self.status = status
        self.code = code


@dataclass
class RequestContext:
    method: str
    target: str  # path plus query string, as sent on the request line
    path: str
    query: dict[str, str]
    headers: dict[str, str]  # lower-cased names
    body: bytes
    _json: Optional[dict] = field(default=None, repr=False)

    @property
    def json(self) -> dict:
        if self._json is None:
            if not self.body:
                self._json = {}
            else:
                try:
                    parsed = json.loads(self.body)
                except json.JSONDecodeError:
                    raise ApiError(400, "bad request")
                if not isinstance(parsed, dict):
                    raise ApiError(400, "bad request")
                self._json = parsed
        return self._json

    def field(self, name: str) -> str:
        value = self.json.get(name)
        if not isinstance(value, str) or not value:
            raise ApiError(400, "bad request")
        return value


Handler = Callable[[RequestContext], dict]


class JsonApp:
    def __init__(self, name: str) -> None:
        self.name = name
        self._routes: dict[tuple[str, str], Handler] = {}

    def route(self, method: str, path: str) -> Callable[[Handler], Handler]:
        def register(handler: Handler) -> Handler:
            self._routes[(method.upper(), path)] = handler
            return handler

        return register

    def dispatch(self, method: str, target: str, headers: dict[str, str], body: bytes) -> tuple[int, bytes]:
        split = urlsplit(target)
        ctx = RequestContext(
            method=method.upper(),
            target=target,
            path=split.path,
            query=dict(parse_qsl(split.query)),
            headers={k.lower(): v for k, v in headers.items()},
            body=body,
        )
        handler = self._routes.get((ctx.method, ctx.path))
        try:
            if handler is None:
                raise ApiError(404, "not found")
            payload = handler(ctx)
            status = 200
        except ApiError as exc:
            payload = {"error": exc.code}
            status = exc.status
        except Exception:
            logger.exception("%s: unhandled error for %s %s", self.name, method, target)
            payload = {"error": "internal"}
            status = 500
        return status, json.dumps(payload).encode("utf-8")


class _AppRequestHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    app: JsonApp  # set on the subclass

    def _handle(self) -> None:
        length = int(self.headers.get("Content-Length", 0) or 0)
        body = self.rfile.read(length) if length else b""
        status, response = self.app.dispatch(self.command, self.path, dict(self.headers.items()), body)
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(response)))
        self.end_headers()
        self.wfile.write(response)

    do_GET = _handle
    do_POST = _handle

    def log_message(self, *args) -> None:  # quiet by default
        pass


@dataclass
class ServerHandle:
    server: ThreadingHTTPServer
    thread: threading.Thread
    host: str
    port: int

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def close(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        self.thread.join(timeout=5)


def serve(app: JsonApp, host: str = "127.0.0.1", port: int = 0) -> ServerHandle:
    handler_cls = type("Handler", (_AppRequestHandler,), {"app": app})
    server = ThreadingHTTPServer((host, port), handler_cls)
    server.daemon_threads = True
    thread = threading.Thread(target=server.serve_forever, name=f"{app.name}-http", daemon=True)
    thread.start()
    return ServerHandle(server=server, thread=thread, host=host, port=server.server_address[1])
