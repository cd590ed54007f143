"""Client-side transports: direct dispatch or real loopback HTTP.

Daemons talk to servers only through this interface, which is what lets
the harness swap in-memory calls for real sockets, record transcripts and
inject faults without touching protocol code.
"""

from __future__ import annotations

import http.client
import socket
from typing import Protocol

from .httpd import JsonApp


class TransportError(Exception):
    """Network-level failure (connection refused, timeout, injected drop)."""


class Transport(Protocol):
    def request(self, method: str, target: str, headers: dict[str, str], body: bytes) -> tuple[int, bytes]:
        ...


class InMemoryTransport:
    def __init__(self, app: JsonApp) -> None:
        self._app = app

    def request(self, method: str, target: str, headers: dict[str, str], body: bytes) -> tuple[int, bytes]:
        return self._app.dispatch(method, target, headers, body)


class HttpTransport:
    def __init__(self, base_url: str, timeout: float = 5.0) -> None:
        if base_url.startswith("http://"):
            base_url = base_url[len("http://"):]
        elif base_url.startswith("https://"):
            raise ValueError("TLS termination is a deployment concern; this transport is loopback-only")
        host, _, port = base_url.rstrip("/").partition(":")
        self._host = host
        self._port = int(port) if port else 80
        self._timeout = timeout

    def request(self, method: str, target: str, headers: dict[str, str], body: bytes) -> tuple[int, bytes]:
        conn = http.client.HTTPConnection(self._host, self._port, timeout=self._timeout)
        try:
            conn.request(method, target, body=body, headers={"Content-Type": "application/json", **headers})
            response = conn.getresponse()
            return response.status, response.read()
        except (OSError, socket.timeout, http.client.HTTPException) as exc:
            raise TransportError(str(exc)) from exc
        finally:
            conn.close()
