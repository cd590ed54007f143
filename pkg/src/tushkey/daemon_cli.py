"""tushkeyd: the device daemon command line.

Subcommands: register (first run), enroll (RP registration ceremony),
auth (login ceremony), sync (sender-side fan-out), run (receiver loop).
Exit codes: 0 ok, 1 protocol failure, 2 config error, 3 identity failure,
4 network failure, 5 state corruption.
"""

from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading

from .authenticator import AuthenticatorError, StoreCorruptError
from .daemon import (
    NETWORK_TIMEOUT,
    ApiCallError,
    ConfigError,
    DaemonConfig,
    DeviceAgent,
    DeviceState,
    StateError,
    first_run_register,
)
from .identity import IdentityError, provider_from_spec
from .transport import HttpTransport, TransportError
from .wire import b64u

EXIT_OK = 0
EXIT_PROTOCOL = 1
EXIT_CONFIG = 2
EXIT_IDENTITY = 3
EXIT_NETWORK = 4
EXIT_STATE = 5


def _build_agent(config: DaemonConfig) -> DeviceAgent:
    state = DeviceState.load(config.state_path)
    return DeviceAgent(
        config,
        state,
        rp_transport=HttpTransport(config.rp_url, timeout=NETWORK_TIMEOUT),
        relay_transport=HttpTransport(config.relay_url, timeout=NETWORK_TIMEOUT),
    )


def cmd_register(config: DaemonConfig) -> int:
    provider = provider_from_spec(config.identity)
    state = first_run_register(config, provider, HttpTransport(config.relay_url, timeout=NETWORK_TIMEOUT))
    print(f"device {state.device_id} registered for {state.user_id}")
    return EXIT_OK


def cmd_enroll(config: DaemonConfig) -> int:
    result = _build_agent(config).enroll_with_rp()
    print(f"enrolled credential {b64u(result.credential_id)} in {result.total_ms:.1f} ms")
    return EXIT_OK


def cmd_auth(config: DaemonConfig) -> int:
    _build_agent(config).authenticate_to_rp()
    print("authenticated")
    return EXIT_OK


def cmd_sync(config: DaemonConfig) -> int:
    report = _build_agent(config).sender_sync()
    for deposit in report.deposits:
        status = "ok" if deposit.ok else f"failed: {deposit.error}"
        print(f"  -> {deposit.receiver_device_id}: {status}")
    print(f"fan-out complete: {report.succeeded} ok, {report.failed} failed")
    return EXIT_OK if report.failed == 0 else EXIT_PROTOCOL


def cmd_run(config: DaemonConfig) -> int:
    agent = _build_agent(config)
    stop = threading.Event()

    def handle_signal(signum, frame):
        stop.set()

    signal.signal(signal.SIGINT, handle_signal)
    signal.signal(signal.SIGTERM, handle_signal)
    print(f"polling every {config.poll_interval:.0f} s as device {agent.state.device_id}")
    agent.run_loop(stop)
    print("shut down cleanly")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="tushkeyd", description=__doc__)
    parser.add_argument("command", choices=["register", "run", "sync", "enroll", "auth"])
    parser.add_argument("--config", required=True, help="path to the daemon JSON config")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)

    try:
        config = DaemonConfig.from_file(args.config)
        handler = {
            "register": cmd_register,
            "enroll": cmd_enroll,
            "auth": cmd_auth,
            "sync": cmd_sync,
            "run": cmd_run,
        }[args.command]
        return handler(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IdentityError as exc:
        print(f"identity failure: {exc}", file=sys.stderr)
        return EXIT_IDENTITY
    except TransportError as exc:
        print(f"network failure: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    except (StateError, StoreCorruptError) as exc:
        print(f"state corruption: {exc}", file=sys.stderr)
        return EXIT_STATE
    except (ApiCallError, AuthenticatorError) as exc:
        print(f"protocol failure: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL


if __name__ == "__main__":
    sys.exit(main())
