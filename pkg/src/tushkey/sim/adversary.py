"""Adversarial property checks.

Each check stands up a fresh deployment and plays an attack against it:
a passive observer on the relay path, token and request replays, a
cross-tenant deposit, a forged request signature, and expiry of tokens
and envelopes. A check passes when the attack is rejected (or, for the
passive observer, when the captured bytes reveal nothing).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .. import crypto
from ..clock import ManualClock
from ..daemon import ApiCallError, RelayClient
from ..wire import b64u_decode
from .transcript import find_leak
from .world import SimWorld


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _world() -> SimWorld:
    return SimWorld("memory")


def _extract_issued_token(world: SimWorld) -> bytes:
    for entry in world.transcript.entries:
        if entry.target == "/token/issue" and entry.status == 200:
            return b64u_decode(json.loads(entry.response_body)["token"])
    raise AssertionError("no token issue observed in transcript")


def check_passive_relay_secrecy() -> CheckResult:
    """A full sync runs; everything the relay ever sees or stores must not
    contain the access token in any common encoding."""
    with _world() as world:
        sender = world.add_device("sender")
        receiver = world.add_device("receiver")
        sender.agent.enroll_with_rp()
        sender.agent.sender_sync()
        enrolled = receiver.agent.receiver_poll_once()
        if len(enrolled) != 1:
            return CheckResult("passive_relay_secrecy", False, "sync did not complete")
        token = _extract_issued_token(world)
        observable = world.transcript.channel_bytes("->relay") + b"\n" + world.relay.dump_state_bytes()
        leak = find_leak(observable, token)
        if leak is not None:
            return CheckResult("passive_relay_secrecy", False, f"token visible on relay path: {leak[:24]!r}")
        return CheckResult("passive_relay_secrecy", True, f"{len(world.transcript)} exchanges scanned")


def check_token_replay_same_device() -> CheckResult:
    """A device that already redeemed a token cannot redeem it again."""
    with _world() as world:
        sender = world.add_device("sender")
        receiver = world.add_device("receiver")
        sender.agent.enroll_with_rp()
        proof = sender.agent.authenticate_to_rp()
        token = sender.agent.rp.issue_access_token(proof)

        device_id = receiver.state.device_id
        session_id, challenge = sender.agent.rp.redeem_begin(token, device_id)
        pair = crypto.generate_credential_keypair()
        sender.agent.rp.redeem_finish(
            session_id,
            crypto.generate_challenge(),
            crypto.credential_public_bytes(pair.public),
            crypto.sign_challenge(pair.private, challenge),
        )
        try:
            sender.agent.rp.redeem_begin(token, device_id)
        except ApiCallError as exc:
            if exc.code == "token already redeemed":
                return CheckResult("token_replay_same_device", True, "second redemption rejected")
            return CheckResult("token_replay_same_device", False, f"unexpected error {exc.code}")
        return CheckResult("token_replay_same_device", False, "second redemption was accepted")


def check_envelope_replay_after_ack() -> CheckResult:
    """Resending a captured deposit request must not re-enroll anyone."""
    with _world() as world:
        sender = world.add_device("sender")
        receiver = world.add_device("receiver")
        sender.agent.enroll_with_rp()
        sender.agent.sender_sync()
        if len(receiver.agent.receiver_poll_once()) != 1:
            return CheckResult("envelope_replay_after_ack", False, "initial sync failed")
        devices_before = world.rp_device_count()

        deposit = next(
            e for e in world.transcript.entries if e.method == "POST" and e.target == "/envelopes"
        )
        raw_relay = world.raw_transport("relay")
        status, body = raw_relay.request(
            deposit.method, deposit.target, deposit.request_headers, deposit.request_body
        )
        if status != 401:
            return CheckResult("envelope_replay_after_ack", False, f"replayed deposit accepted ({status})")
        if receiver.agent.receiver_poll_once() != []:
            return CheckResult("envelope_replay_after_ack", False, "replay produced a new envelope")
        if world.rp_device_count() != devices_before:
            return CheckResult("envelope_replay_after_ack", False, "device count changed")
        return CheckResult("envelope_replay_after_ack", True, "replayed deposit rejected by signature cache")


def check_cross_user_deposit() -> CheckResult:
    """A device of one user cannot deposit into another user's mailbox."""
    with _world() as world:
        world.add_device("alice1", user="alice@example.com")
        alice2 = world.add_device("alice2", user="alice@example.com")
        mallory = world.add_device("mallory1", user="mallory@example.com")

        key = crypto.derive_token_key(mallory.state.dh.private, alice2.state.dh.public)
        envelope = crypto.seal_token(key, b"planted token", world.clock())
        try:
            mallory.agent.relay.deposit_envelope(alice2.state.device_id, envelope.to_bytes())
        except ApiCallError as exc:
            if exc.code == "not peer devices":
                return CheckResult("cross_user_deposit", True, "cross-tenant deposit rejected")
            return CheckResult("cross_user_deposit", False, f"unexpected error {exc.code}")
        return CheckResult("cross_user_deposit", False, "cross-tenant deposit accepted")


def check_request_forgery() -> CheckResult:
    """Knowing a device id is not enough: requests need its signing key."""
    with _world() as world:
        victim = world.add_device("victim")
        attacker_key = crypto.generate_request_signing_keypair()
        impostor = RelayClient(
            world.raw_transport("relay"), victim.state.device_id, attacker_key.private, clock=world.clock
        )
        try:
            impostor.poll_envelopes()
        except ApiCallError as exc:
            if exc.code == "unauthorized":
                return CheckResult("request_forgery", True, "forged signature rejected")
            return CheckResult("request_forgery", False, f"unexpected error {exc.code}")
        return CheckResult("request_forgery", False, "forged request accepted")


def check_expiry() -> CheckResult:
    """Expired tokens and expired envelopes are both refused."""
    clock = ManualClock(auto_tick=1e-6)
    with SimWorld("memory", clock=clock) as world:
        sender = world.add_device("sender")
        receiver = world.add_device("receiver")
        sender.agent.enroll_with_rp()
        proof = sender.agent.authenticate_to_rp()
        token = sender.agent.rp.issue_access_token(proof)
        sender.agent.sender_sync()  # deposits an envelope for the receiver

        clock.advance(601)

        try:
            sender.agent.rp.redeem_begin(token, receiver.state.device_id)
            return CheckResult("expiry", False, "expired token accepted")
        except ApiCallError as exc:
            if exc.code != "token expired":
                return CheckResult("expiry", False, f"unexpected error {exc.code}")

        if receiver.agent.receiver_poll_once() != []:
            return CheckResult("expiry", False, "expired envelope redeemed")
        if receiver.agent.relay.poll_envelopes():
            return CheckResult("expiry", False, "expired envelope not discarded")
        return CheckResult("expiry", True, "expired token and envelope both rejected")


ALL_CHECKS = [
    check_passive_relay_secrecy,
    check_token_replay_same_device,
    check_envelope_replay_after_ack,
    check_cross_user_deposit,
    check_request_forgery,
    check_expiry,
]


def adversary_suite() -> list[CheckResult]:
    return [check() for check in ALL_CHECKS]
