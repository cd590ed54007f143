import pytest

from tushkey import crypto
from tushkey.clock import ManualClock
from tushkey.rp import RpService
from tushkey.storage import InMemoryStorage


@pytest.fixture
def clock():
    return ManualClock()


@pytest.fixture
def rp(clock):
    return RpService(InMemoryStorage(), clock=clock)


class CeremonyHelper:
    """Drives RP ceremonies with ad-hoc credentials, outside any daemon."""

    def __init__(self, rp_service):
        self.rp = rp_service
        self.pairs = {}

    def register(self, user_id, keypair=None):
        session_id, challenge = self.rp.begin_registration(user_id)
        keypair = keypair or crypto.generate_credential_keypair()
        credential_id = crypto.generate_challenge()
        signature = crypto.sign_challenge(keypair.private, challenge)
        self.rp.finish_registration(
            session_id, credential_id, crypto.credential_public_bytes(keypair.public), signature
        )
        self.pairs[credential_id] = keypair
        return credential_id, keypair

    def authenticate(self, user_id, credential_id, keypair):
        session_id, challenge, allowed = self.rp.begin_authentication(user_id)
        assert credential_id in allowed
        signature = crypto.sign_challenge(keypair.private, challenge)
        return self.rp.finish_authentication(session_id, credential_id, signature)

    def redeem(self, token, device_id, keypair=None):
        session_id, challenge = self.rp.redeem_token_begin(token, device_id)
        keypair = keypair or crypto.generate_credential_keypair()
        credential_id = crypto.generate_challenge()
        signature = crypto.sign_challenge(keypair.private, challenge)
        return self.rp.redeem_token_finish(
            session_id, credential_id, crypto.credential_public_bytes(keypair.public), signature
        )


@pytest.fixture
def ceremonies(rp):
    return CeremonyHelper(rp)
