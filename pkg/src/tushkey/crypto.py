"""Cryptographic primitives used by every other component.

Covers the four things the protocol needs:

* 16-byte random challenges for the challenge-response ceremonies,
* RSA-2048 credential keypairs with PSS/SHA-256 signatures,
* X25519 key agreement, reduced to a 32-byte token key via HKDF-SHA256
  with the context string ``tush-key-v1``,
* authenticated symmetric sealing of access tokens in the public Fernet
  wire layout (version 0x80, big-endian timestamp, IV, AES-128-CBC with
  PKCS#7 padding, HMAC-SHA-256 trailer), so independently written
  implementations of that format can open our envelopes and vice versa.

All operations are pure or draw from the OS CSPRNG; nothing here keeps
shared mutable state, so everything is safe to call concurrently.
"""

from __future__ import annotations

import hmac
import secrets
import struct
from dataclasses import dataclass
from typing import Optional, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives import padding as block_padding
from cryptography.hazmat.primitives.asymmetric import padding as rsa_padding
from cryptography.hazmat.primitives.asymmetric import rsa
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

CHALLENGE_LENGTH = 16
RSA_KEY_BITS = 2048
TOKEN_KEY_LENGTH = 32
TOKEN_KEY_CONTEXT = b"tush-key-v1"
ENVELOPE_VERSION = 0x80
DEFAULT_ENVELOPE_TTL = 600.0

_ENVELOPE_HEADER = struct.Struct(">BQ")  # version, seconds since epoch
_MAC_LENGTH = 32
_IV_LENGTH = 16
_MIN_ENVELOPE_LENGTH = _ENVELOPE_HEADER.size + _IV_LENGTH + 16 + _MAC_LENGTH


class CryptoError(Exception):
    """Base class for failures raised by this module."""


class IntegrityError(CryptoError):
    """Envelope failed authentication (bad MAC, malformed layout, bad padding)."""

    def __init__(self, message: str = "integrity failure") -> None:
        super().__init__(message)


class EnvelopeExpiredError(CryptoError):
    def __init__(self, message: str = "envelope expired") -> None:
        super().__init__(message)


class DegeneratePeerKeyError(CryptoError):
    """The peer supplied a low-order public element; the shared point is all zeros."""

    def __init__(self, message: str = "degenerate peer key") -> None:
        super().__init__(message)


# ---------------------------------------------------------------------------
# Challenges
# ---------------------------------------------------------------------------

def generate_challenge() -> bytes:
    """Return 16 fresh octets from the OS CSPRNG."""
    return secrets.token_bytes(CHALLENGE_LENGTH)


def _require_challenge(challenge: bytes) -> None:
    if not isinstance(challenge, (bytes, bytearray)) or len(challenge) != CHALLENGE_LENGTH:
        raise CryptoError(f"challenge must be exactly {CHALLENGE_LENGTH} octets")


# ---------------------------------------------------------------------------
# Credential keypairs (RSA-2048, PSS/SHA-256 over the raw challenge)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CredentialKeyPair:
    private: rsa.RSAPrivateKey
    public: rsa.RSAPublicKey


_PSS = rsa_padding.PSS(
    mgf=rsa_padding.MGF1(hashes.SHA256()),
    salt_length=rsa_padding.PSS.DIGEST_LENGTH,
)


def generate_credential_keypair() -> CredentialKeyPair:
    private = rsa.generate_private_key(public_exponent=65537, key_size=RSA_KEY_BITS)
    return CredentialKeyPair(private=private, public=private.public_key())


def sign_challenge(private: rsa.RSAPrivateKey, challenge: bytes) -> bytes:
    _require_challenge(challenge)
    if not isinstance(private, rsa.RSAPrivateKey):
        raise CryptoError("malformed private key")
    return private.sign(bytes(challenge), _PSS, hashes.SHA256())


def verify_signature(
    public: Union[rsa.RSAPublicKey, bytes],
    challenge: bytes,
    signature: bytes,
) -> bool:
    """True iff `signature` is a valid PSS/SHA-256 signature over `challenge`.

    Malformed inputs of any kind return False; this never raises.
    """
    try:
        key = load_credential_public_key(public) if isinstance(public, (bytes, bytearray)) else public
        key.verify(bytes(signature), bytes(challenge), _PSS, hashes.SHA256())
        return True
    except (InvalidSignature, ValueError, TypeError, AttributeError, CryptoError):
        return False


def credential_public_bytes(public: rsa.RSAPublicKey) -> bytes:
    return public.public_bytes(
        encoding=serialization.Encoding.DER,
        format=serialization.PublicFormat.SubjectPublicKeyInfo,
    )


def load_credential_public_key(der: bytes) -> rsa.RSAPublicKey:
    try:
        key = serialization.load_der_public_key(bytes(der))
    except Exception as exc:
        raise CryptoError("malformed public key") from exc
    if not isinstance(key, rsa.RSAPublicKey):
        raise CryptoError("not an RSA public key")
    return key


def credential_private_bytes(private: rsa.RSAPrivateKey) -> bytes:
    """PKCS#8 DER for the private half. Only ever stored inside a sealed store."""
    return private.private_bytes(
        encoding=serialization.Encoding.DER,
        format=serialization.PrivateFormat.PKCS8,
        encryption_algorithm=serialization.NoEncryption(),
    )


def load_credential_private_key(der: bytes) -> rsa.RSAPrivateKey:
    try:
        key = serialization.load_der_private_key(bytes(der), password=None)
    except Exception as exc:
        raise CryptoError("malformed private key") from exc
    if not isinstance(key, rsa.RSAPrivateKey):
        raise CryptoError("not an RSA private key")
    return key


# ---------------------------------------------------------------------------
# Diffie-Hellman key agreement (X25519) and token-key derivation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DhKeyPair:
    private: X25519PrivateKey
    public: bytes  # 32-byte raw public element


def generate_dh_keypair() -> DhKeyPair:
    private = X25519PrivateKey.generate()
    return DhKeyPair(private=private, public=dh_public_bytes(private))


def dh_keypair_from_private_bytes(raw: bytes) -> DhKeyPair:
    private = X25519PrivateKey.from_private_bytes(bytes(raw))
    return DhKeyPair(private=private, public=dh_public_bytes(private))


def dh_public_bytes(private: X25519PrivateKey) -> bytes:
    return private.public_key().public_bytes(
        encoding=serialization.Encoding.Raw,
        format=serialization.PublicFormat.Raw,
    )


def dh_private_bytes(private: X25519PrivateKey) -> bytes:
    return private.private_bytes(
        encoding=serialization.Encoding.Raw,
        format=serialization.PrivateFormat.Raw,
        encryption_algorithm=serialization.NoEncryption(),
    )


def derive_token_key(own_private: X25519PrivateKey, peer_public: bytes) -> bytes:
    """Agree on a 32-byte token key: HKDF-SHA256 over the shared point.

    Salt is empty and the info string pins the key to this protocol version.
    Both sides of an exchange derive identical bytes. Low-order peer elements
    produce an all-zero shared point, which the exchange rejects.
    """
    if not isinstance(peer_public, (bytes, bytearray)) or len(peer_public) != 32:
        raise CryptoError("peer public element must be 32 octets")
    try:
        peer = X25519PublicKey.from_public_bytes(bytes(peer_public))
        shared = own_private.exchange(peer)
    except ValueError as exc:
        raise DegeneratePeerKeyError() from exc
    if shared == bytes(32):  # defensive; the exchange above already rejects this
        raise DegeneratePeerKeyError()
    return HKDF(
        algorithm=hashes.SHA256(),
        length=TOKEN_KEY_LENGTH,
        salt=None,
        info=TOKEN_KEY_CONTEXT,
    ).derive(shared)


# ---------------------------------------------------------------------------
# Authenticated token envelopes (Fernet wire layout)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EncryptedEnvelope:
    version: int
    timestamp: int
    iv: bytes
    ciphertext: bytes
    mac: bytes

    def to_bytes(self) -> bytes:
        return _ENVELOPE_HEADER.pack(self.version, self.timestamp) + self.iv + self.ciphertext + self.mac

    @classmethod
    def from_bytes(cls, raw: bytes) -> "EncryptedEnvelope":
        raw = bytes(raw)
        if len(raw) < _MIN_ENVELOPE_LENGTH:
            raise IntegrityError()
        version, timestamp = _ENVELOPE_HEADER.unpack_from(raw)
        if version != ENVELOPE_VERSION:
            raise IntegrityError()
        iv = raw[_ENVELOPE_HEADER.size:_ENVELOPE_HEADER.size + _IV_LENGTH]
        ciphertext = raw[_ENVELOPE_HEADER.size + _IV_LENGTH:-_MAC_LENGTH]
        if not ciphertext or len(ciphertext) % 16 != 0:
            raise IntegrityError()
        return cls(version=version, timestamp=timestamp, iv=iv, ciphertext=ciphertext, mac=raw[-_MAC_LENGTH:])


def _split_token_key(key: bytes) -> tuple[bytes, bytes]:
    if not isinstance(key, (bytes, bytearray)) or len(key) != TOKEN_KEY_LENGTH:
        raise CryptoError(f"token key must be {TOKEN_KEY_LENGTH} octets")
    return bytes(key[:16]), bytes(key[16:])  # MAC subkey, cipher subkey


def seal_token(key: bytes, plaintext: bytes, now: float) -> EncryptedEnvelope:
    """Seal `plaintext` under `key` with a fresh random IV."""
    mac_key, enc_key = _split_token_key(key)
    if not plaintext:
        raise CryptoError("plaintext must be non-empty")

    padder = block_padding.PKCS7(128).padder()
    padded = padder.update(bytes(plaintext)) + padder.finalize()
    iv = secrets.token_bytes(_IV_LENGTH)
    encryptor = Cipher(algorithms.AES(enc_key), modes.CBC(iv)).encryptor()
    ciphertext = encryptor.update(padded) + encryptor.finalize()

    header = _ENVELOPE_HEADER.pack(ENVELOPE_VERSION, int(now))
    mac = hmac.new(mac_key, header + iv + ciphertext, "sha256").digest()
    return EncryptedEnvelope(
        version=ENVELOPE_VERSION,
        timestamp=int(now),
        iv=iv,
        ciphertext=ciphertext,
        mac=mac,
    )


def open_token(
    key: bytes,
    envelope: EncryptedEnvelope,
    now: float,
    ttl: Optional[float] = DEFAULT_ENVELOPE_TTL,
) -> bytes:
    """Authenticate, expiry-check and decrypt an envelope.

    The MAC is verified before anything else, so every tampered envelope
    fails with IntegrityError regardless of which field was touched. A pass
    of `ttl=None` skips the expiry check (used for at-rest stores).
    """
    mac_key, enc_key = _split_token_key(key)
    if envelope.version != ENVELOPE_VERSION or len(envelope.iv) != _IV_LENGTH:
        raise IntegrityError()
    if not envelope.ciphertext or len(envelope.ciphertext) % 16 != 0:
        raise IntegrityError()

    header = _ENVELOPE_HEADER.pack(envelope.version, envelope.timestamp)
    expected = hmac.new(mac_key, header + envelope.iv + envelope.ciphertext, "sha256").digest()
    if not hmac.compare_digest(expected, envelope.mac):
        raise IntegrityError()

    if ttl is not None and now - envelope.timestamp > ttl:
        raise EnvelopeExpiredError()

    decryptor = Cipher(algorithms.AES(enc_key), modes.CBC(envelope.iv)).decryptor()
    padded = decryptor.update(envelope.ciphertext) + decryptor.finalize()
    unpadder = block_padding.PKCS7(128).unpadder()
    try:
        return unpadder.update(padded) + unpadder.finalize()
    except ValueError as exc:
        # Unreachable after a valid MAC; kept as a defensive mapping.
        raise IntegrityError() from exc


# ---------------------------------------------------------------------------
# Request-signing keypairs (Ed25519) for authenticating relay API calls
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RequestSigningKeyPair:
    private: Ed25519PrivateKey
    public: bytes  # 32-byte raw verify key


def generate_request_signing_keypair() -> RequestSigningKeyPair:
    private = Ed25519PrivateKey.generate()
    return RequestSigningKeyPair(private=private, public=request_verify_bytes(private))


def request_signing_keypair_from_private_bytes(raw: bytes) -> RequestSigningKeyPair:
    private = Ed25519PrivateKey.from_private_bytes(bytes(raw))
    return RequestSigningKeyPair(private=private, public=request_verify_bytes(private))


def request_verify_bytes(private: Ed25519PrivateKey) -> bytes:
    return private.public_key().public_bytes(
        encoding=serialization.Encoding.Raw,
        format=serialization.PublicFormat.Raw,
    )


def request_signing_private_bytes(private: Ed25519PrivateKey) -> bytes:
    return private.private_bytes(
        encoding=serialization.Encoding.Raw,
        format=serialization.PrivateFormat.Raw,
        encryption_algorithm=serialization.NoEncryption(),
    )


def sign_request(private: Ed25519PrivateKey, message: bytes) -> bytes:
    return private.sign(message)


def verify_request(public: bytes, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(bytes(public)).verify(bytes(signature), message)
        return True
    except (InvalidSignature, ValueError, TypeError):
        return False
