"""Declarative multi-device scenarios.

A scenario names its devices and an ordered list of steps over them:
register, enroll, sync, poll, authenticate, inject_fault, plus a
`parallel` group that runs its child steps concurrently to exercise
redemption races. The runner executes steps against a SimWorld, records
phase timings and per-step outcomes, and captures the full wire
transcript for byte-scan assertions.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..authenticator import AuthenticatorError
from ..crypto import CryptoError
from ..daemon import ApiCallError
from ..transport import TransportError
from .faults import FaultRule
from .timing import PHASE_SYNC, MEMORY_TIMING_NOTE, TimingReport, TimingRow, add_enrollment_rows
from .world import DEFAULT_USER, SimWorld

ACTIONS = {"register", "enroll", "sync", "poll", "authenticate", "inject_fault", "parallel"}
FAULT_TARGETS = {"rp", "relay"}


class ScenarioError(Exception):
    pass


@dataclass
class DeviceSpec:
    name: str
    platform: str = ""
    user: str = DEFAULT_USER
    start_registered: bool = True


@dataclass
class Step:
    action: str
    device: Optional[str] = None
    fault: Optional[dict] = None
    steps: list["Step"] = field(default_factory=list)


@dataclass
class Scenario:
    name: str
    devices: list[DeviceSpec]
    steps: list[Step]
    continue_on_failure: bool = False

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        try:
            devices = [DeviceSpec(**spec) for spec in data["devices"]]
            steps = [_parse_step(raw) for raw in data["steps"]]
            scenario = cls(
                name=data["name"],
                devices=devices,
                steps=steps,
                continue_on_failure=bool(data.get("continue_on_failure", False)),
            )
        except (KeyError, TypeError) as exc:
            raise ScenarioError(f"malformed scenario: {exc}") from exc
        scenario.validate()
        return scenario

    @classmethod
    def from_file(cls, path: str) -> "Scenario":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, ValueError) as exc:
            raise ScenarioError(f"cannot load scenario {path}: {exc}") from exc

    def validate(self) -> None:
        names = [d.name for d in self.devices]
        if len(set(names)) != len(names):
            raise ScenarioError("duplicate device names")
        declared = set(names)

        def check(steps: list[Step]) -> None:
            for step in steps:
                if step.action not in ACTIONS:
                    raise ScenarioError(f"unknown action {step.action!r}")
                if step.action == "parallel":
                    if not step.steps:
                        raise ScenarioError("empty parallel group")
                    check(step.steps)
                    continue
                if step.action == "inject_fault":
                    fault = step.fault or {}
                    if fault.get("target", "relay") not in FAULT_TARGETS:
                        raise ScenarioError(f"unknown fault target in {fault}")
                if step.device is None or step.device not in declared:
                    raise ScenarioError(f"step {step.action!r} references undeclared device {step.device!r}")

        check(self.steps)


def _parse_step(raw: dict) -> Step:
    return Step(
        action=raw.get("action", ""),
        device=raw.get("device"),
        fault=raw.get("fault"),
        steps=[_parse_step(s) for s in raw.get("steps", [])],
    )


@dataclass
class StepOutcome:
    action: str
    device: Optional[str]
    ok: bool
    detail: str = ""
    enrolled: int = 0


@dataclass
class ScenarioResult:
    scenario: Scenario
    world: SimWorld
    report: TimingReport
    outcomes: list[StepOutcome]
    aborted: bool = False

    @property
    def failures(self) -> list[StepOutcome]:
        return [o for o in self.outcomes if not o.ok]

    @property
    def transcript(self):
        return self.world.transcript

    def close(self) -> None:
        self.world.close()


_STEP_FAILURES = (ApiCallError, TransportError, AuthenticatorError, CryptoError)


class ScenarioRunner:
    def __init__(self, scenario: Scenario, transport: str = "memory", base_dir: Optional[str] = None) -> None:
        self.scenario = scenario
        self.world = SimWorld(transport, base_dir=base_dir)
        self.report = TimingReport(transport=transport)
        if transport == "memory":
            self.report.notes.append(MEMORY_TIMING_NOTE)
        self.outcomes: list[StepOutcome] = []
        self._outcome_lock = threading.Lock()
        self._last_sync: Optional[tuple[str, float]] = None  # sender name, perf counter at token issue

    def run(self) -> ScenarioResult:
        for spec in self.scenario.devices:
            self.world.add_device(
                spec.name, user=spec.user, platform=spec.platform, register=spec.start_registered
            )
        aborted = False
        for step in self.scenario.steps:
            ok = self._run_step(step)
            if not ok and not self.scenario.continue_on_failure:
                aborted = True
                break
        return ScenarioResult(
            scenario=self.scenario,
            world=self.world,
            report=self.report,
            outcomes=self.outcomes,
            aborted=aborted,
        )

    # -- step execution ----------------------------------------------------------

    def _run_step(self, step: Step) -> bool:
        if step.action == "parallel":
            threads = []
            results: list[bool] = []

            def run_child(child: Step) -> None:
                results.append(self._run_step(child))

            for child in step.steps:
                thread = threading.Thread(target=run_child, args=(child,))
                threads.append(thread)
                thread.start()
            for thread in threads:
                thread.join()
            return all(results)

        try:
            outcome = self._execute(step)
        except _STEP_FAILURES as exc:
            outcome = StepOutcome(step.action, step.device, ok=False, detail=str(exc))
        with self._outcome_lock:
            self.outcomes.append(outcome)
        return outcome.ok

    def _execute(self, step: Step) -> StepOutcome:
        name = step.device
        label = self._label(name)

        if step.action == "register":
            self.world.register_device(name)
            return StepOutcome(step.action, name, ok=True)

        device = self.world.devices[name]
        if device.agent is None:
            return StepOutcome(step.action, name, ok=False, detail="device not registered")

        if step.action == "enroll":
            result = device.agent.enroll_with_rp()
            add_enrollment_rows(self.report, self.scenario.name, label, result)
            return StepOutcome(step.action, name, ok=True)

        if step.action == "sync":
            fan_out = device.agent.sender_sync()
            self._last_sync = (name, fan_out.token_issued_perf)
            detail = f"{fan_out.succeeded} ok, {fan_out.failed} failed"
            return StepOutcome(step.action, name, ok=fan_out.failed == 0, detail=detail)

        if step.action == "poll":
            enrolled = device.agent.receiver_poll_once()
            done = time.perf_counter()
            if self._last_sync is not None:
                sender_name, issued_perf = self._last_sync
                for _ in enrolled:
                    self.report.add(
                        TimingRow(
                            scenario=self.scenario.name,
                            sender=self._label(sender_name),
                            receiver=label,
                            phase=PHASE_SYNC,
                            elapsed_ms=(done - issued_perf) * 1000.0,
                        )
                    )
            return StepOutcome(step.action, name, ok=True, enrolled=len(enrolled))

        if step.action == "authenticate":
            device.agent.authenticate_to_rp()
            return StepOutcome(step.action, name, ok=True)

        if step.action == "inject_fault":
            fault = dict(step.fault or {})
            target = fault.pop("target", "relay")
            rule = FaultRule(**fault)
            injector = device.relay_faults if target == "relay" else device.rp_faults
            injector.install(rule)
            return StepOutcome(step.action, name, ok=True, detail=f"{rule.kind} on {target}")

        raise ScenarioError(f"unknown action {step.action!r}")

    def _label(self, name: str) -> str:
        device = self.world.devices.get(name)
        if device is not None and device.platform:
            return f"{name} ({device.platform})"
        return name


def run_scenario(scenario: Scenario, transport: str = "memory", base_dir: Optional[str] = None) -> ScenarioResult:
    return ScenarioRunner(scenario, transport, base_dir=base_dir).run()
