"""Per-device background agent.

One agent per device runs the whole device side of the protocol: first-run
registration with the relay, the RP enrollment and login ceremonies,
sender-side token fan-out, and the receiver poll loop that turns relayed
envelopes into fresh local credentials. The credential private key a
receiver enrolls with is generated inside its own authenticator during
redemption; the envelope only ever carries the access token.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional
from urllib.parse import urlsplit

from . import crypto
from .authenticator import NoSuchCredentialError, SoftwareAuthenticator
from .identity import IdentityProvider
from .transport import Transport, TransportError
from .wire import b64u, b64u_decode, canonical_request_bytes

logger = logging.getLogger(__name__)

DEFAULT_POLL_INTERVAL = 2.0
DEFAULT_TOKEN_TTL = 600.0
NETWORK_TIMEOUT = 5.0


class ConfigError(Exception):
    pass


class StateError(Exception):
    """Device state file missing pieces or failing to unseal."""


class ApiCallError(Exception):
    """A server answered with an error code; the code is carried verbatim."""

    def __init__(self, code: str, status: int) -> None:
        super().__init__(code)
        self.code = code
        self.status = status


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class DaemonConfig:
    relay_url: str
    rp_url: str
    state_path: str
    poll_interval: float = DEFAULT_POLL_INTERVAL
    token_ttl: float = DEFAULT_TOKEN_TTL
    credential_store_path: Optional[str] = None
    rp_id: Optional[str] = None
    identity: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.relay_url or not self.rp_url or not self.state_path:
            raise ConfigError("relay_url, rp_url and state_path are required")
        if self.poll_interval < 1:
            raise ConfigError("poll_interval must be at least 1 second")

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "DaemonConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def effective_rp_id(self) -> str:
        if self.rp_id:
            return self.rp_id
        host = urlsplit(self.rp_url).hostname
        if not host:
            raise ConfigError(f"cannot derive an RP id from {self.rp_url!r}")
        return host

    def effective_store_path(self) -> str:
        return self.credential_store_path or str(self.state_path) + ".credentials"


# ---------------------------------------------------------------------------
# Persisted device state
# ---------------------------------------------------------------------------

@dataclass
class DeviceState:
    device_id: str
    user_id: str
    dh: crypto.DhKeyPair
    request_signing: crypto.RequestSigningKeyPair
    credential_store_path: str
    registered_with_relay: bool = True

    def save(self, path: str | os.PathLike, *, clock: Callable[[], float] = time.time) -> None:
        """Atomic write-temp-rename; private halves sealed under a sidecar key."""
        target = Path(path)
        key = _state_key(target, create=True)
        now = clock()
        dh_sealed = crypto.seal_token(key, crypto.dh_private_bytes(self.dh.private), now)
        signing_sealed = crypto.seal_token(
            key, crypto.request_signing_private_bytes(self.request_signing.private), now
        )
        payload = {
            "device_id": self.device_id,
            "user_id": self.user_id,
            "dh_public": b64u(self.dh.public),
            "dh_private_sealed": b64u(dh_sealed.to_bytes()),
            "request_verify_key": b64u(self.request_signing.public),
            "request_signing_private_sealed": b64u(signing_sealed.to_bytes()),
            "credential_store_path": self.credential_store_path,
            "registered_with_relay": self.registered_with_relay,
        }
        tmp = target.with_name(target.name + ".tmp")
        tmp.write_text(json.dumps(payload, indent=2))
        os.replace(tmp, target)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "DeviceState":
        target = Path(path)
        try:
            data = json.loads(target.read_text())
            key = _state_key(target, create=False)
            dh_raw = crypto.open_token(
                key, crypto.EncryptedEnvelope.from_bytes(b64u_decode(data["dh_private_sealed"])),
                now=time.time(), ttl=None,
            )
            signing_raw = crypto.open_token(
                key,
                crypto.EncryptedEnvelope.from_bytes(b64u_decode(data["request_signing_private_sealed"])),
                now=time.time(), ttl=None,
            )
            state = cls(
                device_id=data["device_id"],
                user_id=data["user_id"],
                dh=crypto.dh_keypair_from_private_bytes(dh_raw),
                request_signing=crypto.request_signing_keypair_from_private_bytes(signing_raw),
                credential_store_path=data["credential_store_path"],
                registered_with_relay=bool(data["registered_with_relay"]),
            )
        except (OSError, ValueError, KeyError, crypto.CryptoError) as exc:
            raise StateError(f"state corrupt: {exc}") from exc
        if state.dh.public != b64u_decode(data["dh_public"]):
            raise StateError("state corrupt: public half does not match sealed private half")
        return state


def _state_key(state_path: Path, *, create: bool) -> bytes:
    key_path = state_path.with_name(state_path.name + ".key")
    if key_path.exists():
        key = key_path.read_bytes()
        if len(key) != crypto.TOKEN_KEY_LENGTH:
            raise StateError("state corrupt: bad key file")
        return key
    if not create:
        raise StateError("state corrupt: key file missing")
    key = os.urandom(crypto.TOKEN_KEY_LENGTH)
    fd = os.open(key_path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o600)
    try:
        os.write(fd, key)
    finally:
        os.close(fd)
    return key


# ---------------------------------------------------------------------------
# Protocol clients
# ---------------------------------------------------------------------------

class _JsonClient:
    def __init__(self, transport: Transport) -> None:
        self._transport = transport

    def _call(self, method: str, target: str, headers: dict[str, str], body: bytes) -> dict:
        status, raw = self._transport.request(method, target, headers, body)
        try:
            payload = json.loads(raw) if raw else {}
        except ValueError:
            payload = {}
        if status >= 400 or "error" in payload:
            raise ApiCallError(payload.get("error", f"http {status}"), status)
        return payload

    def _post(self, path: str, payload: dict) -> dict:
        return self._call("POST", path, {}, json.dumps(payload).encode())


class RpClient(_JsonClient):
    def begin_registration(self, user_id: str) -> tuple[bytes, bytes]:
        data = self._post("/register/begin", {"user_id": user_id})
        return b64u_decode(data["session_id"]), b64u_decode(data["challenge"])

    def finish_registration(
        self,
        session_id: bytes,
        credential_id: bytes,
        public_key: bytes,
        signature: bytes,
        replaces_credential_id: Optional[bytes] = None,
    ) -> bytes:
        payload = {
            "session_id": b64u(session_id),
            "credential_id": b64u(credential_id),
            "public_key": b64u(public_key),
            "signature": b64u(signature),
        }
        if replaces_credential_id is not None:
            payload["replaces_credential_id"] = b64u(replaces_credential_id)
        return b64u_decode(self._post("/register/finish", payload)["credential_id"])

    def begin_authentication(self, user_id: str) -> tuple[bytes, bytes, list[bytes]]:
        data = self._post("/auth/begin", {"user_id": user_id})
        return (
            b64u_decode(data["session_id"]),
            b64u_decode(data["challenge"]),
            [b64u_decode(c) for c in data["credential_ids"]],
        )

    def finish_authentication(self, session_id: bytes, credential_id: bytes, signature: bytes) -> bytes:
        data = self._post(
            "/auth/finish",
            {"session_id": b64u(session_id), "credential_id": b64u(credential_id), "signature": b64u(signature)},
        )
        return b64u_decode(data["session_proof"])

    def issue_access_token(self, session_proof: bytes) -> bytes:
        return b64u_decode(self._post("/token/issue", {"session_proof": b64u(session_proof)})["token"])

    def redeem_begin(self, token: bytes, device_id: str) -> tuple[bytes, bytes]:
        data = self._post("/token/redeem/begin", {"token": b64u(token), "device_id": device_id})
        return b64u_decode(data["session_id"]), b64u_decode(data["challenge"])

    def redeem_finish(
        self,
        session_id: bytes,
        credential_id: bytes,
        public_key: bytes,
        signature: bytes,
        replaces_credential_id: Optional[bytes] = None,
    ) -> bytes:
        payload = {
            "session_id": b64u(session_id),
            "credential_id": b64u(credential_id),
            "public_key": b64u(public_key),
            "signature": b64u(signature),
        }
        if replaces_credential_id is not None:
            payload["replaces_credential_id"] = b64u(replaces_credential_id)
        return b64u_decode(self._post("/token/redeem/finish", payload)["credential_id"])


class RelayClient(_JsonClient):
    """Relay calls carry the X-TUSH device signature headers."""

    def __init__(
        self,
        transport: Transport,
        device_id: str,
        signing_key,
        *,
        clock: Callable[[], float] = time.time,
    ) -> None:
        super().__init__(transport)
        self._device_id = device_id
        self._signing_key = signing_key
        self._clock = clock

    def _signed(self, method: str, target: str, body: bytes) -> dict:
        timestamp = f"{self._clock():.6f}"
        message = canonical_request_bytes(method, target, body, timestamp)
        headers = {
            "X-TUSH-Device": self._device_id,
            "X-TUSH-Timestamp": timestamp,
            "X-TUSH-Signature": b64u(crypto.sign_request(self._signing_key, message)),
        }
        return self._call(method, target, headers, body)

    def register_device(self, user_id: str, dh_public: bytes, request_verify_key: bytes) -> None:
        self._post(
            "/devices",
            {
                "user_id": user_id,
                "device_id": self._device_id,
                "dh_public": b64u(dh_public),
                "request_verify_key": b64u(request_verify_key),
            },
        )

    def list_peers(self) -> list[tuple[str, bytes]]:
        data = self._signed("GET", f"/devices/peers?device_id={self._device_id}", b"")
        return [(p["device_id"], b64u_decode(p["dh_public"])) for p in data["peers"]]

    def deposit_envelope(self, receiver_id: str, envelope: bytes, rp_origin: str = "") -> int:
        payload = {
            "sender_id": self._device_id,
            "receiver_id": receiver_id,
            "envelope": b64u(envelope),
            "rp_origin": rp_origin,
        }
        return self._signed("POST", "/envelopes", json.dumps(payload).encode())["index"]

    def poll_envelopes(self) -> list[dict]:
        data = self._signed("GET", f"/envelopes?receiver_id={self._device_id}", b"")
        return data["items"]

    def ack_envelope(self, index: int) -> None:
        payload = {"receiver_id": self._device_id, "index": index}
        self._signed("POST", "/envelopes/ack", json.dumps(payload).encode())


# ---------------------------------------------------------------------------
# First-run registration
# ---------------------------------------------------------------------------

def first_run_register(
    config: DaemonConfig,
    identity_provider: IdentityProvider,
    relay_transport: Transport,
    *,
    clock: Callable[[], float] = time.time,
) -> DeviceState:
    """Create this device's identity and announce it to the relay.

    Idempotent: an existing state file is loaded and returned untouched.
    Atomic: the state file is written only after the relay accepted the
    registration, so any failure leaves no state behind. A device-id
    collision at the relay is retried once with a fresh id.
    """
    state_path = Path(config.state_path)
    if state_path.exists():
        return DeviceState.load(state_path)

    identity = identity_provider.authenticate()
    dh = crypto.generate_dh_keypair()
    signing = crypto.generate_request_signing_keypair()

    attempts = 0
    while True:
        device_id = str(uuid.uuid4())
        client = RelayClient(relay_transport, device_id, signing.private, clock=clock)
        try:
            client.register_device(identity.user_id, dh.public, signing.public)
            break
        except ApiCallError as exc:
            attempts += 1
            if exc.code != "device exists" or attempts > 1:
                raise

    state = DeviceState(
        device_id=device_id,
        user_id=identity.user_id,
        dh=dh,
        request_signing=signing,
        credential_store_path=config.effective_store_path(),
    )
    state.save(state_path, clock=clock)
    return state


# ---------------------------------------------------------------------------
# The agent
# ---------------------------------------------------------------------------

@dataclass
class PeerDeposit:
    receiver_device_id: str
    ok: bool
    error: str = ""


@dataclass
class FanOutReport:
    token_issued_at: float        # protocol clock, for TTL reasoning
    token_issued_perf: float      # perf_counter, for sync-flow timing
    deposits: list[PeerDeposit]

    @property
    def succeeded(self) -> int:
        return sum(1 for d in self.deposits if d.ok)

    @property
    def failed(self) -> int:
        return sum(1 for d in self.deposits if not d.ok)


@dataclass
class EnrollmentResult:
    credential_id: bytes
    challenge_ms: float
    keys_sign_verify_ms: float
    total_ms: float


class DeviceAgent:
    def __init__(
        self,
        config: DaemonConfig,
        state: DeviceState,
        rp_transport: Transport,
        relay_transport: Transport,
        *,
        clock: Callable[[], float] = time.time,
        authenticator: Optional[SoftwareAuthenticator] = None,
        on_enrollment: Optional[Callable[[bytes], None]] = None,
    ) -> None:
        self.config = config
        self.state = state
        self.clock = clock
        self.rp = RpClient(rp_transport)
        self.relay = RelayClient(relay_transport, state.device_id, state.request_signing.private, clock=clock)
        self.authenticator = authenticator or SoftwareAuthenticator(state.credential_store_path, clock=clock)
        self.rp_id = config.effective_rp_id()
        self.on_enrollment = on_enrollment
        self._poll_lock = threading.Lock()
        self._handled_envelopes: set[int] = set()

    # -- RP ceremonies -------------------------------------------------------

    def enroll_with_rp(self, *, mutate_signature: Optional[Callable[[bytes], bytes]] = None) -> EnrollmentResult:
        """Run the registration ceremony; on RP rejection no local credential survives.

        `mutate_signature` is a fault-injection hook for tests.
        """
        previous = self.authenticator.find_credential(self.rp_id, self.state.user_id)
        t_start = time.perf_counter()
        session_id, challenge = self.rp.begin_registration(self.state.user_id)
        t_challenge = time.perf_counter()

        credential_id, public_key, signature = self.authenticator.make_credential(
            self.rp_id, self.state.user_id, challenge
        )
        if mutate_signature is not None:
            signature = mutate_signature(signature)
        try:
            returned = self.rp.finish_registration(
                session_id,
                credential_id,
                public_key,
                signature,
                replaces_credential_id=previous.credential_id if previous else None,
            )
        except ApiCallError:
            self.authenticator.delete_credential(credential_id)
            raise
        t_done = time.perf_counter()
        if returned != credential_id:
            raise ApiCallError("credential id mismatch", 500)
        return EnrollmentResult(
            credential_id=credential_id,
            challenge_ms=(t_challenge - t_start) * 1000.0,
            keys_sign_verify_ms=(t_done - t_challenge) * 1000.0,
            total_ms=(t_done - t_start) * 1000.0,
        )

    def authenticate_to_rp(self) -> bytes:
        """Login ceremony; returns the session proof the RP hands out."""
        credential = self.authenticator.find_credential(self.rp_id, self.state.user_id)
        if credential is None:
            raise NoSuchCredentialError()
        session_id, challenge, _allowed = self.rp.begin_authentication(self.state.user_id)
        signature = self.authenticator.get_assertion(self.rp_id, credential.credential_id, challenge)
        return self.rp.finish_authentication(session_id, credential.credential_id, signature)

    # -- sender side -----------------------------------------------------------

    def sender_sync(self, session_proof: Optional[bytes] = None) -> FanOutReport:
        """Issue an access token and fan it out to every relay peer.

        Each peer gets its own envelope under the pairwise derived key; a
        failure for one peer is recorded and does not stop the others.
        """
        proof = session_proof if session_proof is not None else self.authenticate_to_rp()
        token = self.rp.issue_access_token(proof)
        issued_at = self.clock()
        issued_perf = time.perf_counter()

        deposits: list[PeerDeposit] = []
        for receiver_id, receiver_dh_public in self.relay.list_peers():
            try:
                pair_key = crypto.derive_token_key(self.state.dh.private, receiver_dh_public)
                envelope = crypto.seal_token(pair_key, token, self.clock())
                self.relay.deposit_envelope(receiver_id, envelope.to_bytes(), rp_origin=self.config.rp_url)
                deposits.append(PeerDeposit(receiver_id, ok=True))
            except (ApiCallError, TransportError, crypto.CryptoError) as exc:
                logger.warning("deposit to %s failed: %s", receiver_id, exc)
                deposits.append(PeerDeposit(receiver_id, ok=False, error=str(exc)))
        return FanOutReport(token_issued_at=issued_at, token_issued_perf=issued_perf, deposits=deposits)

    # -- receiver side -----------------------------------------------------------

    def receiver_poll_once(self) -> list[bytes]:
        """Drain the mailbox: open each envelope, redeem, enroll, acknowledge.

        Envelopes that cannot be opened or whose token the RP refuses are
        acknowledged and discarded so a poison envelope cannot wedge the
        mailbox. Serialized per agent; the begin-before-make_credential
        ordering keeps local and RP state consistent across crashes and
        duplicate deliveries.
        """
        with self._poll_lock:
            enrolled: list[bytes] = []
            for item in self.relay.poll_envelopes():
                index = item["index"]
                if index in self._handled_envelopes:
                    continue
                try:
                    envelope = crypto.EncryptedEnvelope.from_bytes(b64u_decode(item["envelope"]))
                    pair_key = crypto.derive_token_key(
                        self.state.dh.private, b64u_decode(item["sender_dh_public"])
                    )
                    token = crypto.open_token(pair_key, envelope, self.clock(), ttl=self.config.token_ttl)
                except (crypto.CryptoError, ValueError) as exc:
                    logger.warning("discarding envelope %s: %s", index, exc)
                    self._ack(index)
                    continue

                try:
                    credential_id = self._redeem_token(token)
                except ApiCallError as exc:
                    if exc.code in ("token expired", "token already redeemed", "token invalid"):
                        logger.warning("discarding envelope %s: %s", index, exc.code)
                        self._ack(index)
                        continue
                    raise
                self._ack(index)
                enrolled.append(credential_id)
                if self.on_enrollment is not None:
                    self.on_enrollment(credential_id)
            return enrolled

    def _redeem_token(self, token: bytes) -> bytes:
        previous = self.authenticator.find_credential(self.rp_id, self.state.user_id)
        # Begin first: a dead token is detected before the store is touched.
        session_id, challenge = self.rp.redeem_begin(token, self.state.device_id)
        credential_id, public_key, signature = self.authenticator.make_credential(
            self.rp_id, self.state.user_id, challenge
        )
        try:
            self.rp.redeem_finish(
                session_id,
                credential_id,
                public_key,
                signature,
                replaces_credential_id=previous.credential_id if previous else None,
            )
        except ApiCallError:
            self.authenticator.delete_credential(credential_id)
            raise
        return credential_id

    def _ack(self, index: int) -> None:
        self.relay.ack_envelope(index)
        self._handled_envelopes.add(index)
        if len(self._handled_envelopes) > 10_000:
            self._handled_envelopes = set(sorted(self._handled_envelopes)[-1000:])

    # -- service loop ---------------------------------------------------------

    def run_loop(self, stop: threading.Event) -> None:
        """Poll until `stop` is set. Transient failures are logged and the
        next tick retries; an in-flight enrollment always completes before
        the loop re-checks the stop flag."""
        while not stop.is_set():
            try:
                self.receiver_poll_once()
            except (TransportError, ApiCallError) as exc:
                logger.warning("poll tick failed: %s", exc)
            stop.wait(self.config.poll_interval)
