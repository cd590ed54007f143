"""Wire-level helpers shared by every component.

Binary fields cross JSON boundaries as base64url without padding. Signed
requests cover a canonical byte string assembled from the request line,
raw body and the timestamp header, so client and server must build it the
same way from the bytes actually sent.
"""

from __future__ import annotations

import base64
import binascii


def b64u(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def b64u_decode(text: str) -> bytes:
    if not isinstance(text, str):
        raise ValueError("expected base64url string")
    pad = -len(text) % 4
    try:
        return base64.urlsafe_b64decode(text + "=" * pad)
    except (binascii.Error, ValueError) as exc:
        raise ValueError("invalid base64url") from exc


def canonical_request_bytes(method: str, target: str, body: bytes, timestamp: str) -> bytes:
    """Bytes covered by the X-TUSH-Signature header.

    `target` is the full request target including the query string. Both
    sides sign/verify over the raw received fields, so the framing only has
    to be consistent, not parseable.
    """
    return b"\n".join([method.upper().encode("ascii"), target.encode("ascii"), body, timestamp.encode("ascii")])
