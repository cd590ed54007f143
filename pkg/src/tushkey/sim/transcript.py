"""Wire transcript capture and byte-scan helpers.

Every request a device makes flows through a RecordingTransport, so the
transcript is a complete log of what an on-path observer would see. The
byte-scan helpers look for a secret in all the encodings it could
plausibly leak in (raw, base64url, standard base64, hex).
"""

from __future__ import annotations

import base64
import json
import re
import threading
from dataclasses import dataclass, field

from ..transport import Transport

_UUID_RE = re.compile(rb"[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}")
_BLOB_RE = re.compile(rb"[A-Za-z0-9_\-]{20,}")
_NUMBER_RE = re.compile(rb"\d+\.\d+")


@dataclass
class WireExchange:
    channel: str
    method: str
    target: str
    request_headers: dict[str, str]
    request_body: bytes
    status: int
    response_body: bytes


@dataclass
class Transcript:
    entries: list[WireExchange] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record(self, exchange: WireExchange) -> None:
        with self._lock:
            self.entries.append(exchange)

    def all_bytes(self) -> bytes:
        """Everything that crossed the wire, concatenated for scanning."""
        with self._lock:
            chunks = []
            for e in self.entries:
                chunks.append(e.method.encode())
                chunks.append(e.target.encode())
                chunks.append(json.dumps(e.request_headers, sort_keys=True).encode())
                chunks.append(e.request_body)
                chunks.append(e.response_body)
            return b"\n".join(chunks)

    def channel_bytes(self, channel_suffix: str) -> bytes:
        """Wire bytes restricted to channels ending in `channel_suffix`."""
        with self._lock:
            chunks = []
            for e in self.entries:
                if not e.channel.endswith(channel_suffix):
                    continue
                chunks.append(e.target.encode())
                chunks.append(json.dumps(e.request_headers, sort_keys=True).encode())
                chunks.append(e.request_body)
                chunks.append(e.response_body)
            return b"\n".join(chunks)

    def shape(self) -> list[tuple[str, str, str, int]]:
        """Normalized view for determinism checks: random material blanked."""

        def normalize(text: bytes) -> str:
            text = _UUID_RE.sub(b"<uuid>", text)
            text = _BLOB_RE.sub(b"<blob>", text)
            text = _NUMBER_RE.sub(b"<num>", text)
            return text.decode("utf-8", "replace")

        with self._lock:
            return [
                (e.channel, e.method, normalize(e.target.encode()), e.status)
                for e in self.entries
            ]

    def __len__(self) -> int:
        with self._lock:
            return len(self.entries)


class RecordingTransport:
    def __init__(self, inner: Transport, channel: str, transcript: Transcript) -> None:
        self._inner = inner
        self.channel = channel
        self._transcript = transcript

    def request(self, method: str, target: str, headers: dict[str, str], body: bytes) -> tuple[int, bytes]:
        status, response = self._inner.request(method, target, headers, body)
        self._transcript.record(
            WireExchange(
                channel=self.channel,
                method=method,
                target=target,
                request_headers=dict(headers),
                request_body=body,
                status=status,
                response_body=response,
            )
        )
        return status, response


def encodings(secret: bytes) -> list[bytes]:
    return [
        secret,
        base64.urlsafe_b64encode(secret).rstrip(b"="),
        base64.b64encode(secret),
        secret.hex().encode(),
    ]


def find_leak(haystack: bytes, secret: bytes) -> bytes | None:
    for encoded in encodings(secret):
        if encoded in haystack:
            return encoded
    return None
