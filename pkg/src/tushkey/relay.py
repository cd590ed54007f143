"""Relay server: device directory plus encrypted-envelope mailbox.

The relay maps user ids to device ids and their DH public keys, and holds
sealed envelopes until the addressed receiver acknowledges them. It stores
no key material that could open an envelope, so a compromised relay learns
nothing about the tokens passing through it.

Every reading or mutating call (except initial device registration, which
establishes the verify key) must carry a signature over the canonical
request bytes under the calling device's registered verify key. Timestamps
outside a +/-60 s window are rejected, and a signature is accepted only
once, which closes the replay hole a bare device-id check would leave.
"""

from __future__ import annotations

import threading
import time
import uuid
from typing import Callable, Optional

from . import crypto
from .httpd import ApiError, JsonApp, RequestContext
from .storage import Storage
from .wire import b64u, b64u_decode, canonical_request_bytes

ENVELOPE_RETENTION = 900.0
SIGNATURE_WINDOW = 60.0

_STATUS = {
    "device exists": 409,
    "bad device id": 400,
    "unknown device": 404,
    "unauthorized": 401,
    "not peer devices": 403,
    "bad request": 400,
}


def _fail(code: str) -> ApiError:
    return ApiError(_STATUS.get(code, 400), code)


def validate_device_id(device_id: str) -> str:
    """Canonical lowercase UUIDv4 (version nibble 4, RFC 4122 variant)."""
    try:
        parsed = uuid.UUID(device_id)
    except (ValueError, AttributeError, TypeError):
        raise _fail("bad device id")
    if parsed.version != 4 or parsed.variant != uuid.RFC_4122 or str(parsed) != device_id:
        raise _fail("bad device id")
    return device_id


class RelayService:
    def __init__(self, storage: Storage, *, clock: Callable[[], float] = time.time) -> None:
        self._storage = storage
        self._clock = clock

    # -- directory -----------------------------------------------------------

    def register_device(
        self, user_id: str, device_id: str, dh_public: bytes, request_verify_key: bytes
    ) -> None:
        validate_device_id(device_id)
        if not user_id:
            raise _fail("bad request")
        if len(dh_public) != 32 or len(request_verify_key) != 32:
            raise _fail("bad request")
        with self._storage.lock:
            if self._storage.get("devices", device_id) is not None:
                raise _fail("device exists")
            self._storage.put(
                "devices",
                device_id,
                {
                    "user_id": user_id,
                    "dh_public": b64u(dh_public),
                    "request_verify_key": b64u(request_verify_key),
                    "registered_at": self._clock(),
                },
            )

    def get_device(self, device_id: str) -> Optional[dict]:
        return self._storage.get("devices", device_id)

    def list_peers(self, caller_device_id: str) -> list[dict]:
        caller = self._storage.get("devices", caller_device_id)
        if caller is None:
            raise _fail("unknown device")
        return [
            {"device_id": device_id, "dh_public": record["dh_public"]}
            for device_id, record in self._storage.items("devices")
            if record["user_id"] == caller["user_id"] and device_id != caller_device_id
        ]

    # -- mailbox --------------------------------------------------------------

    def deposit_envelope(
        self,
        sender_id: str,
        receiver_id: str,
        envelope: bytes,
        rp_origin: Optional[str] = None,
    ) -> int:
        try:
            crypto.EncryptedEnvelope.from_bytes(envelope)
        except crypto.IntegrityError:
            raise _fail("bad request")
        with self._storage.lock:
            sender = self._storage.get("devices", sender_id)
            receiver = self._storage.get("devices", receiver_id)
            if sender is None:
                raise _fail("unknown device")
            if receiver is None or receiver["user_id"] != sender["user_id"]:
                raise _fail("not peer devices")
            sequence = self._storage.get("meta", "envelope_seq") or {"next": 1}
            index = sequence["next"]
            self._storage.put("meta", "envelope_seq", {"next": index + 1})
            self._storage.put(
                "envelopes",
                f"{index:012d}",
                {
                    "index": index,
                    "sender_device_id": sender_id,
                    "receiver_device_id": receiver_id,
                    "envelope": b64u(envelope),
                    "rp_origin": rp_origin or "",
                    "deposited_at": self._clock(),
                    "delivered": False,
                },
            )
            return index

    def poll_envelopes(self, receiver_id: str) -> list[dict]:
        """Pending envelopes for the receiver, oldest first, with each
        sender's DH public key merged in. Does not mark anything delivered."""
        now = self._clock()
        results = []
        with self._storage.lock:
            for key, record in self._storage.items("envelopes"):
                if record["deposited_at"] + ENVELOPE_RETENTION < now:
                    self._storage.delete("envelopes", key)
                    continue
                if record["delivered"] or record["receiver_device_id"] != receiver_id:
                    continue
                sender = self._storage.get("devices", record["sender_device_id"])
                results.append(
                    {
                        "index": record["index"],
                        "envelope": record["envelope"],
                        "sender_device_id": record["sender_device_id"],
                        "sender_dh_public": sender["dh_public"] if sender else "",
                        "deposited_at": record["deposited_at"],
                    }
                )
        results.sort(key=lambda r: (r["deposited_at"], r["index"]))
        return results

    def ack_envelope(self, receiver_id: str, index: int) -> None:
        with self._storage.lock:
            record = self._storage.get("envelopes", f"{index:012d}")
            if record is None or record["receiver_device_id"] != receiver_id:
                raise _fail("unauthorized")
            record["delivered"] = True
            self._storage.put("envelopes", f"{index:012d}", record)

    def dump_state_bytes(self) -> bytes:
        return self._storage.dump_bytes()


class RequestAuthenticator:
    """Verifies the X-TUSH-* headers on signed relay calls.

    A (device, signature) pair is accepted once; entries older than twice
    the timestamp window are pruned as they can no longer validate anyway.
    """

    def __init__(self, service: RelayService, clock: Callable[[], float]) -> None:
        self._service = service
        self._clock = clock
        self._seen: dict[tuple[str, str], float] = {}
        self._lock = threading.Lock()

    def authenticate(self, ctx: RequestContext) -> str:
        device_id = ctx.headers.get("x-tush-device", "")
        timestamp = ctx.headers.get("x-tush-timestamp", "")
        signature = ctx.headers.get("x-tush-signature", "")
        if not device_id or not timestamp or not signature:
            raise _fail("unauthorized")
        device = self._service.get_device(device_id)
        if device is None:
            raise _fail("unknown device")
        try:
            issued = float(timestamp)
        except ValueError:
            raise _fail("unauthorized")
        now = self._clock()
        if abs(now - issued) > SIGNATURE_WINDOW:
            raise _fail("unauthorized")
        message = canonical_request_bytes(ctx.method, ctx.target, ctx.body, timestamp)
        try:
            raw_signature = b64u_decode(signature)
        except ValueError:
            raise _fail("unauthorized")
        if not crypto.verify_request(b64u_decode(device["request_verify_key"]), message, raw_signature):
            raise _fail("unauthorized")
        with self._lock:
            key = (device_id, signature)
            if key in self._seen:
                raise _fail("unauthorized")
            self._seen[key] = now
            if len(self._seen) > 4096:
                cutoff = now - 2 * SIGNATURE_WINDOW
                self._seen = {k: t for k, t in self._seen.items() if t >= cutoff}
        return device_id


# ---------------------------------------------------------------------------
# HTTP surface
# ---------------------------------------------------------------------------

def build_relay_app(service: RelayService, *, clock: Callable[[], float] = time.time) -> JsonApp:
    app = JsonApp("relay")
    authenticator = RequestAuthenticator(service, clock)

    @app.route("POST", "/devices")
    def register(ctx: RequestContext) -> dict:
        try:
            dh_public = b64u_decode(ctx.field("dh_public"))
            verify_key = b64u_decode(ctx.field("request_verify_key"))
        except ValueError:
            raise ApiError(400, "bad request")
        service.register_device(ctx.field("user_id"), ctx.field("device_id"), dh_public, verify_key)
        return {"ok": True}

    @app.route("GET", "/devices/peers")
    def peers(ctx: RequestContext) -> dict:
        caller = authenticator.authenticate(ctx)
        if ctx.query.get("device_id") != caller:
            raise _fail("unauthorized")
        return {"peers": service.list_peers(caller)}

    @app.route("POST", "/envelopes")
    def deposit(ctx: RequestContext) -> dict:
        caller = authenticator.authenticate(ctx)
        if ctx.field("sender_id") != caller:
            raise _fail("unauthorized")
        try:
            envelope = b64u_decode(ctx.field("envelope"))
        except ValueError:
            raise ApiError(400, "bad request")
        index = service.deposit_envelope(
            caller, ctx.field("receiver_id"), envelope, ctx.json.get("rp_origin")
        )
        return {"ok": True, "index": index}

    @app.route("GET", "/envelopes")
    def poll(ctx: RequestContext) -> dict:
        caller = authenticator.authenticate(ctx)
        if ctx.query.get("receiver_id") != caller:
            raise _fail("unauthorized")
        return {"items": service.poll_envelopes(caller)}

    @app.route("POST", "/envelopes/ack")
    def ack(ctx: RequestContext) -> dict:
        caller = authenticator.authenticate(ctx)
        if ctx.field("receiver_id") != caller:
            raise _fail("unauthorized")
        index = ctx.json.get("index")
        if not isinstance(index, int):
            raise ApiError(400, "bad request")
        service.ack_envelope(caller, index)
        return {"ok": True}

    return app
