"""Software stand-in for a platform authenticator (TPM/TEE).

Holds credential private keys, binds each credential to a relying party,
and signs challenges on request. Private key material is reachable only
through get_assertion; no operation returns it and the on-disk store never
contains it in plaintext. The store file is sealed under a per-store random
key kept in a sidecar file with owner-only permissions, which keeps the
byte-scan non-exportability checks meaningful without real hardware.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from . import crypto
from .wire import b64u, b64u_decode

STORE_MAGIC = b"TUSHAUTH1"
_RP_ID_RE = re.compile(r"^[a-z0-9]([a-z0-9.\-]{0,251}[a-z0-9])?$")


class AuthenticatorError(Exception):
    pass


class InvalidRpIdError(AuthenticatorError):
    def __init__(self) -> None:
        super().__init__("invalid rp id")


class NoSuchCredentialError(AuthenticatorError):
    def __init__(self) -> None:
        super().__init__("no such credential")


class RpMismatchError(AuthenticatorError):
    def __init__(self) -> None:
        super().__init__("rp mismatch")


class StoreCorruptError(AuthenticatorError):
    def __init__(self) -> None:
        super().__init__("store corrupt")


class UserVerificationDenied(AuthenticatorError):
    def __init__(self) -> None:
        super().__init__("user verification denied")


def validate_rp_id(rp_id: str) -> str:
    if not isinstance(rp_id, str) or not _RP_ID_RE.match(rp_id):
        raise InvalidRpIdError()
    return rp_id


@dataclass(frozen=True)
class CredentialDescriptor:
    """Public view of a stored credential; carries no private material."""

    credential_id: bytes
    rp_id: str
    user_id: str
    public_key: bytes  # SPKI DER
    created_at: float


@dataclass
class _CredentialRecord:
    credential_id: bytes
    rp_id: str
    user_id: str
    keypair: crypto.CredentialKeyPair
    created_at: float

    def descriptor(self) -> CredentialDescriptor:
        return CredentialDescriptor(
            credential_id=self.credential_id,
            rp_id=self.rp_id,
            user_id=self.user_id,
            public_key=crypto.credential_public_bytes(self.keypair.public),
            created_at=self.created_at,
        )


class SoftwareAuthenticator:
    """Credential store with authenticator semantics.

    Reads may run concurrently; credential creation is serialized by an
    internal lock. The optional `user_verification` hook models the
    user-presence gesture: it is consulted before any signing operation and
    a False return aborts without touching the store.
    """

    def __init__(
        self,
        store_path: str | os.PathLike,
        *,
        clock: Callable[[], float] = time.time,
        user_verification: Optional[Callable[[str, str], bool]] = None,
    ) -> None:
        self._path = Path(store_path)
        self._key_path = self._path.with_name(self._path.name + ".key")
        self._clock = clock
        self._verify_user = user_verification or (lambda operation, rp_id: True)
        self._lock = threading.RLock()
        self._records: dict[bytes, _CredentialRecord] = {}
        if self._path.exists():
            self._load()

    # -- ceremonies ---------------------------------------------------------

    def make_credential(self, rp_id: str, user_id: str, challenge: bytes) -> tuple[bytes, bytes, bytes]:
        """Create and persist a credential for (rp_id, user_id).

        Returns (credential_id, public key DER, signature over challenge).
        Replaces any prior record for the same rp and user.
        """
        validate_rp_id(rp_id)
        if not user_id:
            raise AuthenticatorError("user id must be non-empty")
        if not self._verify_user("make_credential", rp_id):
            raise UserVerificationDenied()

        with self._lock:
            keypair = crypto.generate_credential_keypair()
            record = _CredentialRecord(
                credential_id=crypto.generate_challenge(),  # 16 random octets
                rp_id=rp_id,
                user_id=user_id,
                keypair=keypair,
                created_at=self._clock(),
            )
            for existing in list(self._records.values()):
                if existing.rp_id == rp_id and existing.user_id == user_id:
                    del self._records[existing.credential_id]
            self._records[record.credential_id] = record
            self._persist()
            signature = crypto.sign_challenge(keypair.private, challenge)
            return record.credential_id, crypto.credential_public_bytes(keypair.public), signature

    def get_assertion(self, rp_id: str, credential_id: bytes, challenge: bytes) -> bytes:
        """Sign a challenge with an existing credential. Never exports the key."""
        validate_rp_id(rp_id)
        if not self._verify_user("get_assertion", rp_id):
            raise UserVerificationDenied()
        with self._lock:
            record = self._records.get(bytes(credential_id))
            if record is None:
                raise NoSuchCredentialError()
            if record.rp_id != rp_id:
                raise RpMismatchError()
            return crypto.sign_challenge(record.keypair.private, challenge)

    def list_credentials(self) -> list[CredentialDescriptor]:
        with self._lock:
            return [r.descriptor() for r in self._records.values()]

    def find_credential(self, rp_id: str, user_id: str) -> Optional[CredentialDescriptor]:
        with self._lock:
            for record in self._records.values():
                if record.rp_id == rp_id and record.user_id == user_id:
                    return record.descriptor()
        return None

    def delete_credential(self, credential_id: bytes) -> bool:
        with self._lock:
            removed = self._records.pop(bytes(credential_id), None) is not None
            if removed:
                self._persist()
            return removed

    # -- sealed persistence -------------------------------------------------

    def _store_key(self, create: bool) -> bytes:
        if self._key_path.exists():
            key = self._key_path.read_bytes()
            if len(key) != crypto.TOKEN_KEY_LENGTH:
                raise StoreCorruptError()
            return key
        if not create:
            raise StoreCorruptError()
        key = os.urandom(crypto.TOKEN_KEY_LENGTH)
        fd = os.open(self._key_path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o600)
        try:
            os.write(fd, key)
        finally:
            os.close(fd)
        return key

    def _persist(self) -> None:
        payload = json.dumps(
            {
                "records": [
                    {
                        "credential_id": b64u(r.credential_id),
                        "rp_id": r.rp_id,
                        "user_id": r.user_id,
                        "private_key": b64u(crypto.credential_private_bytes(r.keypair.private)),
                        "created_at": r.created_at,
                    }
                    for r in self._records.values()
                ]
            }
        ).encode("utf-8")
        envelope = crypto.seal_token(self._store_key(create=True), payload, now=self._clock())
        tmp = self._path.with_name(self._path.name + ".tmp")
        tmp.write_bytes(STORE_MAGIC + envelope.to_bytes())
        os.replace(tmp, self._path)

    def _load(self) -> None:
        raw = self._path.read_bytes()
        if not raw.startswith(STORE_MAGIC):
            raise StoreCorruptError()
        try:
            envelope = crypto.EncryptedEnvelope.from_bytes(raw[len(STORE_MAGIC):])
            payload = crypto.open_token(self._store_key(create=False), envelope, now=self._clock(), ttl=None)
            data = json.loads(payload)
            records = {}
            for item in data["records"]:
                private = crypto.load_credential_private_key(b64u_decode(item["private_key"]))
                record = _CredentialRecord(
                    credential_id=b64u_decode(item["credential_id"]),
                    rp_id=item["rp_id"],
                    user_id=item["user_id"],
                    keypair=crypto.CredentialKeyPair(private=private, public=private.public_key()),
                    created_at=item["created_at"],
                )
                records[record.credential_id] = record
        except (crypto.CryptoError, KeyError, ValueError, json.JSONDecodeError) as exc:
            raise StoreCorruptError() from exc
        self._records = records
