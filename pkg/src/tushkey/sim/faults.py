"""Transport-level fault injection: latency, drop, tamper, replay.

An injector sits between an agent's client and the recording transport,
so tampered bytes are recorded exactly as they went on the wire and a
dropped request never appears in the transcript (it never left).
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from typing import Optional

from ..transport import Transport, TransportError
from ..wire import b64u, b64u_decode

_ENVELOPE_HEADER_LEN = 9 + 16   # version+timestamp, IV
_ENVELOPE_MAC_LEN = 32


@dataclass
class FaultRule:
    kind: str                      # latency | drop | tamper | replay
    method: Optional[str] = None   # match any when None
    path_prefix: Optional[str] = None
    count: int = 1                 # how many matching requests are affected
    latency_ms: float = 0.0
    field: str = "envelope"        # JSON field holding b64u binary to tamper
    where: str = "request"         # tamper the request body, or the response
                                   # body (a malicious relay rewriting mail)

    def matches(self, method: str, target: str) -> bool:
        if self.method and self.method.upper() != method.upper():
            return False
        if self.path_prefix and not target.startswith(self.path_prefix):
            return False
        return self.count > 0


def flip_bit_in_ciphertext(raw: bytes) -> bytes:
    """Flip one bit inside the ciphertext region so the result still parses."""
    body_len = len(raw) - _ENVELOPE_HEADER_LEN - _ENVELOPE_MAC_LEN
    position = _ENVELOPE_HEADER_LEN + max(0, body_len // 2)
    tampered = bytearray(raw)
    tampered[position] ^= 0x01
    return bytes(tampered)


class FaultInjector:
    def __init__(self, inner: Transport) -> None:
        self._inner = inner
        self._rules: list[FaultRule] = []
        self._lock = threading.Lock()

    def install(self, rule: FaultRule) -> None:
        with self._lock:
            self._rules.append(rule)

    def _take_matching(self, method: str, target: str) -> Optional[FaultRule]:
        with self._lock:
            for rule in self._rules:
                if rule.matches(method, target):
                    rule.count -= 1
                    return rule
        return None

    def _tamper(self, body: bytes, field_name: str) -> bytes:
        try:
            payload = json.loads(body)
        except ValueError:
            return body
        if _tamper_first_field(payload, field_name):
            return json.dumps(payload).encode()
        return body

    def request(self, method: str, target: str, headers: dict[str, str], body: bytes) -> tuple[int, bytes]:
        rule = self._take_matching(method, target)
        if rule is None:
            return self._inner.request(method, target, headers, body)
        if rule.kind == "latency":
            time.sleep(rule.latency_ms / 1000.0)
            return self._inner.request(method, target, headers, body)
        if rule.kind == "drop":
            raise TransportError("injected drop")
        if rule.kind == "tamper":
            if rule.where == "request":
                # Note: mutating a signed request breaks its signature; the
                # server rejecting it is the observation, not a bug.
                return self._inner.request(method, target, headers, self._tamper(body, rule.field))
            status, response = self._inner.request(method, target, headers, body)
            return status, self._tamper(response, rule.field)
        if rule.kind == "replay":
            status, response = self._inner.request(method, target, headers, body)
            self._inner.request(method, target, headers, body)
            return status, response
        raise ValueError(f"unknown fault kind: {rule.kind}")


def _tamper_first_field(node, field_name: str) -> bool:
    """Flip a bit inside the first b64u value under `field_name`, anywhere
    in the JSON tree. Returns True once something was tampered."""
    if isinstance(node, dict):
        for key, value in node.items():
            if key == field_name and isinstance(value, str):
                try:
                    raw = b64u_decode(value)
                except ValueError:
                    continue
                node[key] = b64u(flip_bit_in_ciphertext(raw))
                return True
            if _tamper_first_field(value, field_name):
                return True
    elif isinstance(node, list):
        for item in node:
            if _tamper_first_field(item, field_name):
                return True
    return False
