"""Phase timing: rows, aggregates, report emission, measurement loops.

Two phases mirror the published measurement tables: `sync_flow` spans
token issue to receiver enrollment complete, and the enrollment ceremony
splits into challenge issue versus keypair+sign+verify. Wall-clock rows
are only meaningful on the loopback transport; in-memory runs are labeled
as non-comparable.
"""

from __future__ import annotations

import csv
import io
import json
import queue
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

from .world import SimWorld

PHASE_SYNC = "sync_flow"
PHASE_CHALLENGE = "enroll_challenge"
PHASE_KEYS = "enroll_keypair_sign_verify"
PHASE_ENROLL_TOTAL = "enroll_total"

MEMORY_TIMING_NOTE = "in-memory transport: timings are not comparable to wall-clock network runs"


@dataclass
class TimingRow:
    scenario: str
    sender: str
    receiver: str
    phase: str
    elapsed_ms: float


@dataclass
class TimingReport:
    transport: str
    rows: list[TimingRow] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def add(self, row: TimingRow) -> None:
        if row.elapsed_ms < 0:
            raise ValueError("elapsed_ms must be non-negative")
        with self._lock:
            self.rows.append(row)

    def phase_rows(self, phase: str) -> list[TimingRow]:
        return [r for r in self.rows if r.phase == phase]

    def aggregates(self) -> list[dict]:
        totals: dict[str, list[float]] = {}
        for row in self.rows:
            totals.setdefault(row.phase, []).append(row.elapsed_ms)
        return [
            {"phase": phase, "mean_ms": sum(values) / len(values), "count": len(values)}
            for phase, values in sorted(totals.items())
        ]


def emit_report(report: TimingReport, fmt: str) -> bytes:
    if fmt == "json":
        payload = {
            "transport": report.transport,
            "notes": report.notes,
            "rows": [asdict(r) for r in report.rows],
            "aggregates": report.aggregates(),
        }
        return json.dumps(payload, indent=2, sort_keys=True).encode()
    if fmt == "csv":
        out = io.StringIO()
        writer = csv.writer(out)
        writer.writerow(["scenario", "sender", "receiver", "phase", "elapsed_ms"])
        for row in report.rows:
            writer.writerow([row.scenario, row.sender, row.receiver, row.phase, f"{row.elapsed_ms:.3f}"])
        return out.getvalue().encode()
    if fmt == "markdown":
        return _emit_markdown(report).encode()
    raise ValueError(f"unknown report format: {fmt}")


def _mean(values: list[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def _emit_markdown(report: TimingReport) -> str:
    lines: list[str] = []
    for note in report.notes:
        lines.append(f"> {note}")
        lines.append("")

    sync_rows = report.phase_rows(PHASE_SYNC)
    lines.append("## Sync time")
    lines.append("")
    lines.append("| Sl. No. | Sender Device | Receiver Device | Time for sync flow (ms) |")
    lines.append("|---|---|---|---|")
    for i, row in enumerate(sync_rows, start=1):
        lines.append(f"| {i} | {row.sender} | {row.receiver} | {row.elapsed_ms:.1f} |")
    if sync_rows:
        lines.append(f"| Average | | | {_mean([r.elapsed_ms for r in sync_rows]):.1f} |")
    lines.append("")

    totals = report.phase_rows(PHASE_ENROLL_TOTAL)
    challenges = report.phase_rows(PHASE_CHALLENGE)
    keys = report.phase_rows(PHASE_KEYS)
    lines.append("## Device enrollment time")
    lines.append("")
    lines.append(
        "| Sl. No. | Challenge creation (ms) | Keypair, sign and verify (ms) | Total enrollment (ms) |"
    )
    lines.append("|---|---|---|---|")
    for i, total in enumerate(totals, start=1):
        challenge_ms = challenges[i - 1].elapsed_ms if i <= len(challenges) else 0.0
        keys_ms = keys[i - 1].elapsed_ms if i <= len(keys) else 0.0
        lines.append(f"| {i} | {challenge_ms:.1f} | {keys_ms:.1f} | {total.elapsed_ms:.1f} |")
    if totals:
        lines.append(f"| Average | | | {_mean([r.elapsed_ms for r in totals]):.1f} |")
    lines.append("")
    return "\n".join(lines)


def add_enrollment_rows(report: TimingReport, scenario: str, device: str, result) -> None:
    for phase, value in (
        (PHASE_CHALLENGE, result.challenge_ms),
        (PHASE_KEYS, result.keys_sign_verify_ms),
        (PHASE_ENROLL_TOTAL, result.total_ms),
    ):
        report.add(TimingRow(scenario=scenario, sender=device, receiver=device, phase=phase, elapsed_ms=value))


def measure_sync_flow(
    *,
    runs: int = 20,
    poll_interval: float = 1.0,
    transport: str = "loopback",
    base_dir: Optional[str] = None,
    sender_platform: str = "sim-sender",
    receiver_platform: str = "sim-receiver",
) -> TimingReport:
    """Repeated sync flows against a continuously polling receiver.

    Each run measures token issue to enrollment complete, including the
    wait for the receiver's next poll tick.
    """
    report = TimingReport(transport=transport)
    if transport == "memory":
        report.notes.append(MEMORY_TIMING_NOTE)
    with SimWorld(transport, poll_interval=poll_interval, base_dir=base_dir) as world:
        sender = world.add_device("sender", platform=sender_platform)
        receiver = world.add_device("receiver", platform=receiver_platform)
        sender.agent.enroll_with_rp()

        enrollments: queue.Queue = queue.Queue()
        receiver.agent.on_enrollment = lambda cid: enrollments.put(time.perf_counter())
        stop = threading.Event()
        loop = threading.Thread(target=receiver.agent.run_loop, args=(stop,), daemon=True)
        loop.start()
        try:
            for _ in range(runs):
                fan_out = sender.agent.sender_sync()
                done = enrollments.get(timeout=5 * poll_interval + 10)
                report.add(
                    TimingRow(
                        scenario="sync-timing",
                        sender=f"sender ({sender_platform})",
                        receiver=f"receiver ({receiver_platform})",
                        phase=PHASE_SYNC,
                        elapsed_ms=(done - fan_out.token_issued_perf) * 1000.0,
                    )
                )
        finally:
            stop.set()
            loop.join(timeout=5)
    return report


def measure_enrollment(
    *,
    runs: int = 5,
    transport: str = "loopback",
    base_dir: Optional[str] = None,
    platform: str = "sim-device",
) -> TimingReport:
    """Repeated enrollment ceremonies; re-enrollment replaces, so one device suffices."""
    report = TimingReport(transport=transport)
    if transport == "memory":
        report.notes.append(MEMORY_TIMING_NOTE)
    with SimWorld(transport, base_dir=base_dir) as world:
        device = world.add_device("device", platform=platform)
        for _ in range(runs):
            result = device.agent.enroll_with_rp()
            add_enrollment_rows(report, "enroll-timing", f"device ({platform})", result)
    return report
