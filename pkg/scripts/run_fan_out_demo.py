#!/usr/bin/env python3
"""End-to-end walkthrough on loopback HTTP, narrated step by step.

One sender enrolls with the RP, fans an access token out to two peers
through the relay, and both peers auto-enroll and then log in with
credentials they generated locally. Finishes with the non-cloning checks:
distinct public keys at the RP and no token plaintext on the relay path.
"""

import json
import sys

from tushkey.sim.transcript import find_leak
from tushkey.sim.world import SimWorld
from tushkey.wire import b64u_decode


def main() -> int:
    with SimWorld("loopback") as world:
        print(f"RP server     at {world.rp_url}")
        print(f"relay server  at {world.relay_url}")

        sender = world.add_device("laptop", platform="linux-pc")
        r1 = world.add_device("phone", platform="android")
        r2 = world.add_device("tablet", platform="ipad")
        print(f"registered 3 devices for {sender.state.user_id}")

        enrollment = sender.agent.enroll_with_rp()
        print(f"sender enrolled with the RP in {enrollment.total_ms:.0f} ms")

        report = sender.agent.sender_sync()
        print(f"sender fan-out: {report.succeeded} envelopes deposited")

        for device in (r1, r2):
            enrolled = device.agent.receiver_poll_once()
            print(f"{device.name}: redeemed and enrolled {len(enrolled)} credential(s)")
            device.agent.authenticate_to_rp()
            print(f"{device.name}: passwordless login ok")

        keys = world.rp_public_keys()
        print(f"RP now holds {len(keys)} devices, {len(set(keys))} distinct public keys")

        token_entry = next(e for e in world.transcript.entries if e.target == "/token/issue")
        token = b64u_decode(json.loads(token_entry.response_body)["token"])
        relay_visible = world.transcript.channel_bytes("->relay") + world.relay.dump_state_bytes()
        leak = find_leak(relay_visible, token)
        print("relay path byte-scan for the access token:", "LEAKED" if leak else "clean")
        print(f"{len(world.transcript)} wire exchanges recorded")
        return 0 if leak is None and len(set(keys)) == 3 else 1


if __name__ == "__main__":
    sys.exit(main())
