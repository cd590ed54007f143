"""Authenticator semantics: RP binding, replacement, non-exportability."""

import pytest
from cryptography.hazmat.primitives.asymmetric import rsa

from tushkey import crypto
from tushkey.authenticator import (
    CredentialDescriptor,
    InvalidRpIdError,
    NoSuchCredentialError,
    RpMismatchError,
    SoftwareAuthenticator,
    StoreCorruptError,
    UserVerificationDenied,
    validate_rp_id,
)

RP = "rp.example"
USER = "alice@example.com"


@pytest.fixture
def auth(tmp_path):
    return SoftwareAuthenticator(tmp_path / "creds.store")


def contains_private_material(obj) -> bool:
    """Compile-time-style API review: walk a returned value for private keys."""
    seen = set()

    def walk(value):
        if id(value) in seen:
            return False
        seen.add(id(value))
        if isinstance(value, rsa.RSAPrivateKey):
            return True
        if isinstance(value, (list, tuple, set)):
            return any(walk(v) for v in value)
        if isinstance(value, dict):
            return any(walk(v) for v in value.values())
        if isinstance(value, CredentialDescriptor):
            return any(walk(getattr(value, f)) for f in ("credential_id", "rp_id", "user_id", "public_key", "created_at"))
        return False

    return walk(obj)


class TestRpIdValidation:
    @pytest.mark.parametrize("good", ["rp.example", "a", "127.0.0.1", "x-y.z0"])
    def test_accepts(self, good):
        assert validate_rp_id(good) == good

    @pytest.mark.parametrize("bad", ["", "RP.example", "rp example", "rp\texample", "a" * 254, ".leading"])
    def test_rejects(self, bad):
        with pytest.raises(InvalidRpIdError):
            validate_rp_id(bad)


class TestMakeCredential:
    def test_round_trip(self, auth):
        challenge = crypto.generate_challenge()
        cred_id, public, signature = auth.make_credential(RP, USER, challenge)
        assert len(cred_id) == 16
        assert crypto.verify_signature(public, challenge, signature)

    def test_replacement_keeps_single_record(self, auth):
        old_id, _, _ = auth.make_credential(RP, USER, crypto.generate_challenge())
        new_id, _, _ = auth.make_credential(RP, USER, crypto.generate_challenge())
        assert new_id != old_id
        records = auth.list_credentials()
        assert len(records) == 1 and records[0].credential_id == new_id
        with pytest.raises(NoSuchCredentialError):
            auth.get_assertion(RP, old_id, crypto.generate_challenge())

    def test_two_stores_same_user_get_distinct_keys(self, tmp_path):
        a = SoftwareAuthenticator(tmp_path / "a.store")
        b = SoftwareAuthenticator(tmp_path / "b.store")
        _, pub_a, _ = a.make_credential(RP, USER, crypto.generate_challenge())
        _, pub_b, _ = b.make_credential(RP, USER, crypto.generate_challenge())
        assert pub_a != pub_b

    def test_invalid_rp_rejected(self, auth):
        with pytest.raises(InvalidRpIdError):
            auth.make_credential("Bad RP", USER, crypto.generate_challenge())

    def test_denied_user_verification(self, tmp_path):
        auth = SoftwareAuthenticator(tmp_path / "c.store", user_verification=lambda op, rp: False)
        with pytest.raises(UserVerificationDenied):
            auth.make_credential(RP, USER, crypto.generate_challenge())
        assert auth.list_credentials() == []


class TestGetAssertion:
    def test_signs_for_matching_rp(self, auth):
        cred_id, public, _ = auth.make_credential(RP, USER, crypto.generate_challenge())
        challenge = crypto.generate_challenge()
        assert crypto.verify_signature(public, challenge, auth.get_assertion(RP, cred_id, challenge))

    def test_rp_mismatch_never_signs(self, auth):
        cred_id, _, _ = auth.make_credential(RP, USER, crypto.generate_challenge())
        with pytest.raises(RpMismatchError):
            auth.get_assertion("other.example", cred_id, crypto.generate_challenge())

    def test_unknown_credential(self, auth):
        with pytest.raises(NoSuchCredentialError):
            auth.get_assertion(RP, b"\x00" * 16, crypto.generate_challenge())

    def test_rp_mismatch_exhaustive_over_records(self, auth):
        ids = [auth.make_credential(RP, f"user{i}@example.com", crypto.generate_challenge())[0] for i in range(4)]
        for cred_id in ids:
            with pytest.raises(RpMismatchError):
                auth.get_assertion("not-the-rp.example", cred_id, crypto.generate_challenge())


class TestListCredentials:
    def test_empty(self, auth):
        assert auth.list_credentials() == []

    def test_one_descriptor_matches(self, auth):
        cred_id, public, _ = auth.make_credential(RP, USER, crypto.generate_challenge())
        (desc,) = auth.list_credentials()
        assert desc.credential_id == cred_id
        assert desc.public_key == public
        assert desc.rp_id == RP and desc.user_id == USER

    def test_no_private_material_in_returns(self, auth):
        result = auth.make_credential(RP, USER, crypto.generate_challenge())
        assert not contains_private_material(result)
        assert not contains_private_material(auth.list_credentials())
        assert not contains_private_material(auth.find_credential(RP, USER))


class TestPersistence:
    def test_round_trip_assertion_still_verifies(self, tmp_path):
        path = tmp_path / "creds.store"
        auth = SoftwareAuthenticator(path)
        cred_id, public, _ = auth.make_credential(RP, USER, crypto.generate_challenge())

        reloaded = SoftwareAuthenticator(path)
        challenge = crypto.generate_challenge()
        assert crypto.verify_signature(public, challenge, reloaded.get_assertion(RP, cred_id, challenge))

    def test_on_disk_bytes_exclude_private_key(self, tmp_path):
        path = tmp_path / "creds.store"
        auth = SoftwareAuthenticator(path)

        captured = []
        original = crypto.generate_credential_keypair

        def spy():
            pair = original()
            captured.append(pair)
            return pair

        crypto_gen = crypto.generate_credential_keypair
        try:
            crypto.generate_credential_keypair = spy
            auth.make_credential(RP, USER, crypto.generate_challenge())
        finally:
            crypto.generate_credential_keypair = crypto_gen

        stored = path.read_bytes()
        assert stored.startswith(b"TUSHAUTH1")
        (pair,) = captured
        private_der = crypto.credential_private_bytes(pair.private)
        from tushkey.wire import b64u

        assert private_der not in stored
        assert b64u(private_der).encode() not in stored
        assert b"PRIVATE KEY" not in stored

    def test_truncated_file_is_corrupt(self, tmp_path):
        path = tmp_path / "creds.store"
        SoftwareAuthenticator(path).make_credential(RP, USER, crypto.generate_challenge())
        path.write_bytes(path.read_bytes()[:40])
        with pytest.raises(StoreCorruptError):
            SoftwareAuthenticator(path)

    def test_bad_magic_is_corrupt(self, tmp_path):
        path = tmp_path / "creds.store"
        SoftwareAuthenticator(path).make_credential(RP, USER, crypto.generate_challenge())
        data = bytearray(path.read_bytes())
        data[0] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(StoreCorruptError):
            SoftwareAuthenticator(path)

    def test_key_file_permissions(self, tmp_path):
        path = tmp_path / "creds.store"
        SoftwareAuthenticator(path).make_credential(RP, USER, crypto.generate_challenge())
        mode = (path.parent / "creds.store.key").stat().st_mode & 0o777
        assert mode == 0o600

    def test_delete_credential(self, auth):
        cred_id, _, _ = auth.make_credential(RP, USER, crypto.generate_challenge())
        assert auth.delete_credential(cred_id) is True
        assert auth.delete_credential(cred_id) is False
        assert auth.list_credentials() == []
