"""Property tests for the crypto layer (agreement, round trips, tampering)."""

import secrets

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tushkey import crypto

dh_private_scalars = st.binary(min_size=32, max_size=32)
token_keys = st.binary(min_size=32, max_size=32)
payloads = st.binary(min_size=1, max_size=4096)


@settings(max_examples=100, deadline=None)
@given(dh_private_scalars, dh_private_scalars)
def test_dh_agreement_symmetry(a_raw, b_raw):
    a = crypto.dh_keypair_from_private_bytes(a_raw)
    b = crypto.dh_keypair_from_private_bytes(b_raw)
    assert crypto.derive_token_key(a.private, b.public) == crypto.derive_token_key(b.private, a.public)


@settings(max_examples=100, deadline=None)
@given(token_keys, payloads)
def test_seal_open_identity(key, plaintext):
    env = crypto.seal_token(key, plaintext, now=1_700_000_000)
    assert crypto.open_token(key, env, now=1_700_000_000, ttl=600) == plaintext


@settings(max_examples=50, deadline=None)
@given(token_keys, token_keys, payloads)
def test_key_separation(key_a, key_b, plaintext):
    if key_a == key_b:
        return
    env = crypto.seal_token(key_a, plaintext, now=1_700_000_000)
    with pytest.raises(crypto.IntegrityError):
        crypto.open_token(key_b, env, now=1_700_000_000, ttl=600)


def test_key_separation_under_dh_derivation():
    a, b, c = (crypto.generate_dh_keypair() for _ in range(3))
    env = crypto.seal_token(crypto.derive_token_key(a.private, b.public), b"pairwise secret", now=0)
    with pytest.raises(crypto.IntegrityError):
        crypto.open_token(crypto.derive_token_key(a.private, c.public), env, now=0, ttl=600)


def test_single_bit_tamper_rejected_across_all_regions():
    """Flip one bit at every byte position: covers all field boundaries."""
    import random

    key = secrets.token_bytes(32)
    env = crypto.seal_token(key, secrets.token_bytes(300), now=1_700_000_000)
    raw = env.to_bytes()
    n = len(raw)
    assert n >= 256

    header_end = 9
    iv_end = header_end + 16
    mac_start = n - 32
    boundaries = {0, 1, header_end - 1, header_end, iv_end - 1, iv_end, mac_start - 1, mac_start, n - 1}

    rng = random.Random(7)
    for pos in range(n):
        for bit in (0, 7) if pos in boundaries else (rng.randrange(8),):
            tampered = bytearray(raw)
            tampered[pos] ^= 1 << bit
            with pytest.raises(crypto.CryptoError):
                parsed = crypto.EncryptedEnvelope.from_bytes(bytes(tampered))
                crypto.open_token(key, parsed, now=1_700_000_000, ttl=600)


@settings(max_examples=100, deadline=None)
@given(st.binary(min_size=0, max_size=600), st.binary(min_size=0, max_size=64))
def test_signature_soundness_random_inputs(challenge_like, signature_like):
    pair_pool = _pair_pool()
    assert crypto.verify_signature(pair_pool.public, challenge_like, signature_like) is False


_POOL = None


def _pair_pool():
    global _POOL
    if _POOL is None:
        _POOL = crypto.generate_credential_keypair()
    return _POOL


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=255), st.integers(min_value=0, max_value=7))
def test_signature_soundness_corruption(byte_index, bit):
    pair = _pair_pool()
    challenge = crypto.generate_challenge()
    sig = bytearray(crypto.sign_challenge(pair.private, challenge))
    sig[byte_index % len(sig)] ^= 1 << bit
    assert crypto.verify_signature(pair.public, challenge, bytes(sig)) is False
