"""Relying Party server: ceremonies, access tokens, auto-enrollment.

Registration and authentication follow the challenge-response model: a
16-byte challenge is issued inside a single-use session, the device signs
it inside its authenticator, and a device record is stored (or a login
granted) only after the signature verifies. Access tokens let an already
authenticated device enroll the user's other devices: a token redeems at
most once per distinct device id within its lifetime, and only a salted
hash of it is ever persisted.

All state lives behind the pluggable Storage interface; compound mutations
hold the storage lock, which gives redemption its compare-and-set
semantics under concurrent requests.
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
import time
from typing import Callable, Optional

from . import crypto
from .httpd import ApiError, JsonApp, RequestContext
from .storage import Storage
from .wire import b64u, b64u_decode

SESSION_TTL = 120.0
TOKEN_TTL = 600.0
PROOF_TTL = 120.0

_STATUS = {
    "verification failed": 400,
    "session invalid": 400,
    "no such user": 404,
    "no enrolled devices": 404,
    "unknown credential": 404,
    "authentication required": 401,
    "token invalid": 404,
    "token expired": 410,
    "token already redeemed": 409,
    "bad request": 400,
}


def _fail(code: str) -> ApiError:
    return ApiError(_STATUS.get(code, 400), code)


class RpService:
    def __init__(self, storage: Storage, *, clock: Callable[[], float] = time.time) -> None:
        self._storage = storage
        self._clock = clock

    # -- sessions -----------------------------------------------------------

    def _new_session(self, user_id: str, purpose: str, **extra) -> tuple[bytes, bytes]:
        session_id = secrets.token_bytes(16)
        challenge = crypto.generate_challenge()
        record = {
            "user_id": user_id,
            "challenge": b64u(challenge),
            "purpose": purpose,
            "issued_at": self._clock(),
            "consumed": False,
            **extra,
        }
        self._storage.put("sessions", session_id.hex(), record)
        return session_id, challenge

    def _consume_session(self, session_id: bytes, purpose: str) -> dict:
        with self._storage.lock:
            key = bytes(session_id).hex()
            record = self._storage.get("sessions", key)
            if (
                record is None
                or record["consumed"]
                or record["purpose"] != purpose
                or self._clock() - record["issued_at"] > SESSION_TTL
            ):
                raise _fail("session invalid")
            record["consumed"] = True
            self._storage.put("sessions", key, record)
            return record

    # -- registration ceremony (new device, explicit user action) ------------

    def begin_registration(self, user_id: str) -> tuple[bytes, bytes]:
        if not user_id:
            raise _fail("bad request")
        return self._new_session(user_id, "register")

    def finish_registration(
        self,
        session_id: bytes,
        credential_id: bytes,
        public_key: bytes,
        signature: bytes,
        replaces_credential_id: Optional[bytes] = None,
    ) -> dict:
        session = self._consume_session(session_id, "register")
        self._verify_ceremony_signature(session, public_key, signature)
        return self._insert_device(
            session["user_id"], credential_id, public_key, "ceremony", replaces_credential_id
        )

    # -- authentication ceremony ---------------------------------------------

    def begin_authentication(self, user_id: str) -> tuple[bytes, bytes, list[bytes]]:
        account = self._storage.get("users", user_id)
        if account is None:
            raise _fail("no such user")
        if not account["devices"]:
            raise _fail("no enrolled devices")
        session_id, challenge = self._new_session(user_id, "authenticate")
        return session_id, challenge, [b64u_decode(d["credential_id"]) for d in account["devices"]]

    def finish_authentication(self, session_id: bytes, credential_id: bytes, signature: bytes) -> bytes:
        session = self._consume_session(session_id, "authenticate")
        device = self._find_device(session["user_id"], credential_id)
        if device is None:
            raise _fail("unknown credential")
        challenge = b64u_decode(session["challenge"])
        if not crypto.verify_signature(b64u_decode(device["public_key"]), challenge, signature):
            raise _fail("verification failed")
        proof = secrets.token_bytes(16)
        self._storage.put(
            "proofs", proof.hex(), {"user_id": session["user_id"], "issued_at": self._clock()}
        )
        return proof

    # -- access tokens --------------------------------------------------------

    def issue_access_token(self, session_proof: bytes) -> bytes:
        record = self._storage.get("proofs", bytes(session_proof).hex())
        if record is None or self._clock() - record["issued_at"] > PROOF_TTL:
            raise _fail("authentication required")
        token = secrets.token_bytes(32)
        salt = secrets.token_bytes(16)
        self._storage.put(
            "tokens",
            secrets.token_hex(8),
            {
                "user_id": record["user_id"],
                "salt": b64u(salt),
                "hash": hashlib.sha256(salt + token).hexdigest(),
                "issued_at": self._clock(),
                "ttl": TOKEN_TTL,
                "redeemed_by": [],
            },
        )
        return token

    def _find_token(self, token: bytes) -> tuple[str, dict]:
        for token_id, record in self._storage.items("tokens"):
            digest = hashlib.sha256(b64u_decode(record["salt"]) + bytes(token)).hexdigest()
            if hmac.compare_digest(digest, record["hash"]):
                return token_id, record
        raise _fail("token invalid")

    def redeem_token_begin(self, token: bytes, device_id: str) -> tuple[bytes, bytes]:
        if not device_id:
            raise _fail("bad request")
        token_id, record = self._find_token(token)
        if self._clock() - record["issued_at"] > record["ttl"]:
            raise _fail("token expired")
        if device_id in record["redeemed_by"]:
            raise _fail("token already redeemed")
        return self._new_session(record["user_id"], "redeem", token_id=token_id, device_id=device_id)

    def redeem_token_finish(
        self,
        session_id: bytes,
        credential_id: bytes,
        public_key: bytes,
        signature: bytes,
        replaces_credential_id: Optional[bytes] = None,
    ) -> dict:
        session = self._consume_session(session_id, "redeem")
        self._verify_ceremony_signature(session, public_key, signature)
        with self._storage.lock:
            record = self._storage.get("tokens", session["token_id"])
            if record is None:
                raise _fail("token invalid")
            if self._clock() - record["issued_at"] > record["ttl"]:
                raise _fail("token expired")
            if session["device_id"] in record["redeemed_by"]:
                raise _fail("token already redeemed")
            self._check_new_device(session["user_id"], credential_id, public_key)
            # Commit point: mark the device id and insert atomically.
            record["redeemed_by"].append(session["device_id"])
            self._storage.put("tokens", session["token_id"], record)
            return self._insert_device(
                session["user_id"], credential_id, public_key, "token_redemption", replaces_credential_id
            )

    # -- account maintenance ---------------------------------------------------

    def account_devices(self, user_id: str) -> list[dict]:
        account = self._storage.get("users", user_id)
        return list(account["devices"]) if account else []

    def remove_device(self, user_id: str, credential_id: bytes) -> bool:
        with self._storage.lock:
            account = self._storage.get("users", user_id)
            if account is None:
                return False
            wanted = b64u(bytes(credential_id))
            kept = [d for d in account["devices"] if d["credential_id"] != wanted]
            removed = len(kept) != len(account["devices"])
            if removed:
                account["devices"] = kept
                self._storage.put("users", user_id, account)
            return removed

    # -- internals ---------------------------------------------------------------

    def _verify_ceremony_signature(self, session: dict, public_key: bytes, signature: bytes) -> None:
        challenge = b64u_decode(session["challenge"])
        if not crypto.verify_signature(public_key, challenge, signature):
            raise _fail("verification failed")

    def _find_device(self, user_id: str, credential_id: bytes) -> Optional[dict]:
        account = self._storage.get("users", user_id)
        if account is None:
            return None
        wanted = b64u(bytes(credential_id))
        for device in account["devices"]:
            if device["credential_id"] == wanted:
                return device
        return None

    def _check_new_device(self, user_id: str, credential_id: bytes, public_key: bytes) -> None:
        if len(credential_id) != 16:
            raise _fail("bad request")
        try:
            crypto.load_credential_public_key(public_key)
        except crypto.CryptoError:
            raise _fail("bad request")
        account = self._storage.get("users", user_id)
        if account and any(d["credential_id"] == b64u(bytes(credential_id)) for d in account["devices"]):
            raise _fail("bad request")

    def _insert_device(
        self,
        user_id: str,
        credential_id: bytes,
        public_key: bytes,
        enrolled_via: str,
        replaces_credential_id: Optional[bytes],
    ) -> dict:
        with self._storage.lock:
            self._check_new_device(user_id, credential_id, public_key)
            account = self._storage.get("users", user_id) or {"devices": []}
            new_id = b64u(bytes(credential_id))
            if replaces_credential_id is not None:
                old_id = b64u(bytes(replaces_credential_id))
                account["devices"] = [d for d in account["devices"] if d["credential_id"] != old_id]
            device = {
                "credential_id": new_id,
                "public_key": b64u(bytes(public_key)),
                "enrolled_at": self._clock(),
                "enrolled_via": enrolled_via,
            }
            account["devices"].append(device)
            self._storage.put("users", user_id, account)
            return device


# ---------------------------------------------------------------------------
# HTTP surface
# ---------------------------------------------------------------------------

def _bytes_field(ctx: RequestContext, name: str) -> bytes:
    try:
        return b64u_decode(ctx.field(name))
    except ValueError:
        raise ApiError(400, "bad request")


def _optional_bytes_field(ctx: RequestContext, name: str) -> Optional[bytes]:
    if ctx.json.get(name) in (None, ""):
        return None
    return _bytes_field(ctx, name)


def build_rp_app(service: RpService) -> JsonApp:
    app = JsonApp("rp")

    @app.route("POST", "/register/begin")
    def register_begin(ctx: RequestContext) -> dict:
        session_id, challenge = service.begin_registration(ctx.field("user_id"))
        return {"session_id": b64u(session_id), "challenge": b64u(challenge)}

    @app.route("POST", "/register/finish")
    def register_finish(ctx: RequestContext) -> dict:
        device = service.finish_registration(
            _bytes_field(ctx, "session_id"),
            _bytes_field(ctx, "credential_id"),
            _bytes_field(ctx, "public_key"),
            _bytes_field(ctx, "signature"),
            _optional_bytes_field(ctx, "replaces_credential_id"),
        )
        return {"credential_id": device["credential_id"]}

    @app.route("POST", "/auth/begin")
    def auth_begin(ctx: RequestContext) -> dict:
        session_id, challenge, credential_ids = service.begin_authentication(ctx.field("user_id"))
        return {
            "session_id": b64u(session_id),
            "challenge": b64u(challenge),
            "credential_ids": [b64u(c) for c in credential_ids],
        }

    @app.route("POST", "/auth/finish")
    def auth_finish(ctx: RequestContext) -> dict:
        proof = service.finish_authentication(
            _bytes_field(ctx, "session_id"),
            _bytes_field(ctx, "credential_id"),
            _bytes_field(ctx, "signature"),
        )
        return {"ok": True, "session_proof": b64u(proof)}

    @app.route("POST", "/token/issue")
    def token_issue(ctx: RequestContext) -> dict:
        token = service.issue_access_token(_bytes_field(ctx, "session_proof"))
        return {"token": b64u(token)}

    @app.route("POST", "/token/redeem/begin")
    def redeem_begin(ctx: RequestContext) -> dict:
        session_id, challenge = service.redeem_token_begin(
            _bytes_field(ctx, "token"), ctx.field("device_id")
        )
        return {"session_id": b64u(session_id), "challenge": b64u(challenge)}

    @app.route("POST", "/token/redeem/finish")
    def redeem_finish(ctx: RequestContext) -> dict:
        device = service.redeem_token_finish(
            _bytes_field(ctx, "session_id"),
            _bytes_field(ctx, "credential_id"),
            _bytes_field(ctx, "public_key"),
            _bytes_field(ctx, "signature"),
            _optional_bytes_field(ctx, "replaces_credential_id"),
        )
        return {"credential_id": device["credential_id"]}

    return app
