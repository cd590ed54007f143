"""Wires a complete deployment in one process.

A SimWorld owns the RP and relay services, exposes them over the chosen
transport (direct dispatch or threaded loopback HTTP; the same handler
code serves both), and builds device agents whose traffic passes through
a fault injector and a transcript recorder.
"""

from __future__ import annotations

import shutil
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from ..clock import ManualClock
from ..daemon import DaemonConfig, DeviceAgent, DeviceState, first_run_register
from ..httpd import ServerHandle, serve
from ..identity import IdentityProvider, MockIdentityProvider
from ..relay import RelayService, build_relay_app
from ..rp import RpService, build_rp_app
from ..storage import InMemoryStorage, Storage
from ..transport import HttpTransport, InMemoryTransport, Transport
from .faults import FaultInjector
from .transcript import RecordingTransport, Transcript

DEFAULT_USER = "user@example.com"
MEMORY_RP_ID = "rp.example"


@dataclass
class SimDevice:
    name: str
    platform: str
    config: DaemonConfig
    state: DeviceState
    agent: DeviceAgent
    rp_faults: FaultInjector
    relay_faults: FaultInjector


class SimWorld:
    def __init__(
        self,
        transport: str = "memory",
        *,
        clock: Optional[Callable[[], float]] = None,
        base_dir: Optional[Path] = None,
        rp_storage: Optional[Storage] = None,
        relay_storage: Optional[Storage] = None,
        poll_interval: float = 1.0,
    ) -> None:
        if transport not in ("memory", "loopback"):
            raise ValueError(f"unknown transport {transport!r}")
        self.transport_kind = transport
        if clock is None:
            clock = ManualClock(auto_tick=1e-6) if transport == "memory" else time.time
        self.clock = clock
        self.poll_interval = poll_interval

        self.rp_storage = rp_storage or InMemoryStorage()
        self.relay_storage = relay_storage or InMemoryStorage()
        self.rp = RpService(self.rp_storage, clock=clock)
        self.relay = RelayService(self.relay_storage, clock=clock)
        self.rp_app = build_rp_app(self.rp)
        self.relay_app = build_relay_app(self.relay, clock=clock)

        self._servers: list[ServerHandle] = []
        if transport == "loopback":
            rp_server = serve(self.rp_app)
            relay_server = serve(self.relay_app)
            self._servers = [rp_server, relay_server]
            self.rp_url = rp_server.base_url
            self.relay_url = relay_server.base_url
            self.rp_id = rp_server.host
        else:
            self.rp_url = "memory://rp"
            self.relay_url = "memory://relay"
            self.rp_id = MEMORY_RP_ID

        self.transcript = Transcript()
        self.devices: dict[str, SimDevice] = {}
        if base_dir is None:
            self._tmp = tempfile.mkdtemp(prefix="tushkey-sim-")
            self.base_dir = Path(self._tmp)
        else:
            self._tmp = None
            self.base_dir = Path(base_dir)

    # -- plumbing -------------------------------------------------------------

    def raw_transport(self, which: str) -> Transport:
        if self.transport_kind == "loopback":
            return HttpTransport(self.rp_url if which == "rp" else self.relay_url)
        return InMemoryTransport(self.rp_app if which == "rp" else self.relay_app)

    def device_channels(self, name: str) -> tuple[FaultInjector, FaultInjector]:
        """Per-device transports: fault injector in front of a recorder.

        The injector doubles as the Transport handed to the agent and as
        the handle tests use to install fault rules.
        """
        rp_recorder = RecordingTransport(self.raw_transport("rp"), f"{name}->rp", self.transcript)
        relay_recorder = RecordingTransport(self.raw_transport("relay"), f"{name}->relay", self.transcript)
        return FaultInjector(rp_recorder), FaultInjector(relay_recorder)

    # -- device lifecycle -------------------------------------------------------

    def add_device(
        self,
        name: str,
        *,
        user: str = DEFAULT_USER,
        platform: str = "",
        register: bool = True,
        identity: Optional[IdentityProvider] = None,
    ) -> SimDevice:
        if name in self.devices:
            raise ValueError(f"device {name!r} already defined")
        home = self.base_dir / name
        home.mkdir(parents=True, exist_ok=True)
        config = DaemonConfig(
            relay_url=self.relay_url,
            rp_url=self.rp_url,
            state_path=str(home / "state.json"),
            poll_interval=self.poll_interval,
            rp_id=self.rp_id,
            credential_store_path=str(home / "credentials.store"),
            identity={"kind": "mock", "user_id": user},
        )
        rp_faults, relay_faults = self.device_channels(name)
        provider = identity or MockIdentityProvider(user)
        if not register:
            device = SimDevice(name, platform, config, None, None, rp_faults, relay_faults)  # type: ignore[arg-type]
            self.devices[name] = device
            return device
        state = first_run_register(config, provider, relay_faults, clock=self.clock)
        agent = DeviceAgent(config, state, rp_faults, relay_faults, clock=self.clock)
        device = SimDevice(name, platform, config, state, agent, rp_faults, relay_faults)
        self.devices[name] = device
        return device

    def register_device(self, name: str, *, identity: Optional[IdentityProvider] = None) -> SimDevice:
        """Complete first-run registration for a device added with register=False."""
        device = self.devices[name]
        if device.agent is not None:
            return device
        user = device.config.identity.get("user_id", DEFAULT_USER)
        provider = identity or MockIdentityProvider(user)
        state = first_run_register(device.config, provider, device.relay_faults, clock=self.clock)
        device.state = state
        device.agent = DeviceAgent(device.config, state, device.rp_faults, device.relay_faults, clock=self.clock)
        return device

    # -- assertions used across tests ---------------------------------------------

    def rp_device_count(self, user: str = DEFAULT_USER) -> int:
        return len(self.rp.account_devices(user))

    def rp_public_keys(self, user: str = DEFAULT_USER) -> list[str]:
        return [d["public_key"] for d in self.rp.account_devices(user)]

    def persistent_state_bytes(self) -> bytes:
        return self.rp_storage.dump_bytes() + b"\n" + self.relay_storage.dump_bytes()

    def close(self) -> None:
        for server in self._servers:
            server.close()
        if self._tmp is not None:
            shutil.rmtree(self._tmp, ignore_errors=True)

    def __enter__(self) -> "SimWorld":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
