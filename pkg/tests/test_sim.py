"""Scenario runner, timing reports, transcripts, fault injection."""

import json
import logging

import pytest

from tushkey.sim.scenario import Scenario, ScenarioError, run_scenario
from tushkey.sim.timing import (
    PHASE_CHALLENGE,
    PHASE_ENROLL_TOTAL,
    PHASE_KEYS,
    PHASE_SYNC,
    TimingReport,
    TimingRow,
    emit_report,
)

HAPPY_SYNC = {
    "name": "happy-sync",
    "devices": [
        {"name": "sender", "platform": "linux-pc"},
        {"name": "r1", "platform": "android"},
    ],
    "steps": [
        {"action": "enroll", "device": "sender"},
        {"action": "sync", "device": "sender"},
        {"action": "poll", "device": "r1"},
        {"action": "authenticate", "device": "r1"},
    ],
}


def run_dict(data, transport="memory", **kwargs):
    return run_scenario(Scenario.from_dict(data), transport=transport, **kwargs)


class TestScenarioValidation:
    def test_unknown_action(self):
        data = dict(HAPPY_SYNC, steps=[{"action": "explode", "device": "sender"}])
        with pytest.raises(ScenarioError, match="unknown action"):
            Scenario.from_dict(data)

    def test_undeclared_device(self):
        data = dict(HAPPY_SYNC, steps=[{"action": "enroll", "device": "ghost"}])
        with pytest.raises(ScenarioError, match="undeclared device"):
            Scenario.from_dict(data)

    def test_duplicate_device_names(self):
        data = dict(HAPPY_SYNC, devices=[{"name": "a"}, {"name": "a"}])
        with pytest.raises(ScenarioError, match="duplicate"):
            Scenario.from_dict(data)

    def test_parallel_group_validated_recursively(self):
        data = dict(HAPPY_SYNC, steps=[{"action": "parallel", "steps": [{"action": "poll", "device": "nope"}]}])
        with pytest.raises(ScenarioError, match="undeclared device"):
            Scenario.from_dict(data)


class TestScenarioRuns:
    def test_happy_sync_memory(self):
        result = run_dict(HAPPY_SYNC)
        try:
            assert result.failures == []
            assert not result.aborted
            assert result.world.rp_device_count() == 2
            sync_rows = result.report.phase_rows(PHASE_SYNC)
            assert len(sync_rows) == 1
            assert sync_rows[0].sender == "sender (linux-pc)"
            assert sync_rows[0].receiver == "r1 (android)"
            enroll_rows = result.report.phase_rows(PHASE_ENROLL_TOTAL)
            assert len(enroll_rows) == 1
        finally:
            result.close()

    def test_fan_out_to_two_receivers(self):
        data = {
            "name": "fan-out",
            "devices": [{"name": "sender"}, {"name": "r1"}, {"name": "r2"}],
            "steps": [
                {"action": "enroll", "device": "sender"},
                {"action": "sync", "device": "sender"},
                {"action": "poll", "device": "r1"},
                {"action": "poll", "device": "r2"},
                {"action": "authenticate", "device": "r1"},
                {"action": "authenticate", "device": "r2"},
            ],
        }
        result = run_dict(data)
        try:
            assert result.failures == []
            assert result.world.rp_device_count() == 3
            assert len(result.report.phase_rows(PHASE_SYNC)) == 2
        finally:
            result.close()

    def test_deferred_registration_step(self):
        data = {
            "name": "late-register",
            "devices": [{"name": "sender"}, {"name": "r1", "start_registered": False}],
            "steps": [
                {"action": "enroll", "device": "sender"},
                {"action": "register", "device": "r1"},
                {"action": "sync", "device": "sender"},
                {"action": "poll", "device": "r1"},
            ],
        }
        result = run_dict(data)
        try:
            assert result.failures == []
            assert result.world.rp_device_count() == 2
        finally:
            result.close()

    def test_tampered_envelope_reported_and_discarded(self, caplog):
        """A malicious relay rewrites mailbox contents; the receiver notices."""
        data = {
            "name": "tamper",
            "devices": [{"name": "sender"}, {"name": "r1"}],
            "steps": [
                {"action": "enroll", "device": "sender"},
                {
                    "action": "inject_fault",
                    "device": "r1",
                    "fault": {"kind": "tamper", "target": "relay", "method": "GET",
                              "path_prefix": "/envelopes", "where": "response"},
                },
                {"action": "sync", "device": "sender"},
                {"action": "poll", "device": "r1"},
            ],
        }
        with caplog.at_level(logging.WARNING, logger="tushkey.daemon"):
            result = run_dict(data)
        try:
            assert result.failures == []
            poll_outcome = [o for o in result.outcomes if o.action == "poll"][0]
            assert poll_outcome.enrolled == 0
            assert "integrity failure" in caplog.text
            assert result.world.rp_device_count() == 1  # only the sender
        finally:
            result.close()

    def test_tampered_deposit_request_rejected_by_signature(self):
        """Mid-path mutation of a signed deposit breaks the request signature."""
        data = {
            "name": "tamper-request",
            "devices": [{"name": "sender"}, {"name": "r1"}],
            "continue_on_failure": True,
            "steps": [
                {"action": "enroll", "device": "sender"},
                {
                    "action": "inject_fault",
                    "device": "sender",
                    "fault": {"kind": "tamper", "target": "relay", "method": "POST", "path_prefix": "/envelopes"},
                },
                {"action": "sync", "device": "sender"},
                {"action": "poll", "device": "r1"},
            ],
        }
        result = run_dict(data)
        try:
            (sync_outcome,) = [o for o in result.outcomes if o.action == "sync"]
            assert not sync_outcome.ok and "1 failed" in sync_outcome.detail
            (poll_outcome,) = [o for o in result.outcomes if o.action == "poll"]
            assert poll_outcome.enrolled == 0
        finally:
            result.close()

    def test_drop_fault_aborts_without_continue_flag(self):
        data = {
            "name": "dropped",
            "devices": [{"name": "sender"}, {"name": "r1"}],
            "steps": [
                {"action": "enroll", "device": "sender"},
                {
                    "action": "inject_fault",
                    "device": "sender",
                    "fault": {"kind": "drop", "target": "rp", "method": "POST", "path_prefix": "/token/issue"},
                },
                {"action": "sync", "device": "sender"},
                {"action": "poll", "device": "r1"},
            ],
        }
        result = run_dict(data)
        try:
            assert result.aborted
            assert [o.action for o in result.outcomes if not o.ok] == ["sync"]
        finally:
            result.close()

    def test_latency_fault_slows_but_does_not_break(self):
        import time as _time

        data = {
            "name": "latency",
            "devices": [{"name": "sender"}, {"name": "r1"}],
            "steps": [
                {"action": "enroll", "device": "sender"},
                {
                    "action": "inject_fault",
                    "device": "r1",
                    "fault": {"kind": "latency", "target": "relay", "method": "GET",
                              "path_prefix": "/envelopes", "latency_ms": 150},
                },
                {"action": "sync", "device": "sender"},
                {"action": "poll", "device": "r1"},
            ],
        }
        started = _time.perf_counter()
        result = run_dict(data)
        elapsed_ms = (_time.perf_counter() - started) * 1000
        try:
            assert result.failures == []
            assert result.world.rp_device_count() == 2
            assert elapsed_ms >= 150
        finally:
            result.close()

    def test_replay_fault_duplicate_deposit_rejected(self):
        """The injector resends the signed deposit; the duplicate dies at the
        signature cache, so the receiver still sees exactly one envelope."""
        data = {
            "name": "replay",
            "devices": [{"name": "sender"}, {"name": "r1"}],
            "steps": [
                {"action": "enroll", "device": "sender"},
                {
                    "action": "inject_fault",
                    "device": "sender",
                    "fault": {"kind": "replay", "target": "relay", "method": "POST",
                              "path_prefix": "/envelopes"},
                },
                {"action": "sync", "device": "sender"},
                {"action": "poll", "device": "r1"},
            ],
        }
        result = run_dict(data)
        try:
            assert result.failures == []
            deposits = [e for e in result.transcript.entries
                        if e.method == "POST" and e.target == "/envelopes"]
            assert [d.status for d in deposits] == [200, 401]
            (poll_outcome,) = [o for o in result.outcomes if o.action == "poll"]
            assert poll_outcome.enrolled == 1
            assert result.world.rp_device_count() == 2
        finally:
            result.close()

    def test_parallel_polls_single_enrollment(self):
        data = {
            "name": "race",
            "devices": [{"name": "sender"}, {"name": "r1"}],
            "steps": [
                {"action": "enroll", "device": "sender"},
                {"action": "sync", "device": "sender"},
                {
                    "action": "parallel",
                    "steps": [{"action": "poll", "device": "r1"}, {"action": "poll", "device": "r1"}],
                },
            ],
        }
        result = run_dict(data)
        try:
            assert result.failures == []
            polls = [o for o in result.outcomes if o.action == "poll"]
            assert sum(o.enrolled for o in polls) == 1
        finally:
            result.close()


class TestTranscripts:
    def test_loopback_and_memory_shapes_match(self, tmp_path):
        memory = run_dict(HAPPY_SYNC, transport="memory", base_dir=str(tmp_path / "m"))
        loopback = run_dict(HAPPY_SYNC, transport="loopback", base_dir=str(tmp_path / "l"))
        try:
            assert memory.failures == [] and loopback.failures == []
            assert memory.transcript.shape() == loopback.transcript.shape()
            assert len(loopback.transcript) > 0
        finally:
            memory.close()
            loopback.close()

    def test_deterministic_shape_across_runs(self, tmp_path):
        first = run_dict(HAPPY_SYNC, base_dir=str(tmp_path / "a"))
        second = run_dict(HAPPY_SYNC, base_dir=str(tmp_path / "b"))
        try:
            assert first.transcript.shape() == second.transcript.shape()
        finally:
            first.close()
            second.close()

    def test_every_step_leaves_wire_evidence(self):
        result = run_dict(HAPPY_SYNC)
        try:
            targets = [e.target for e in result.transcript.entries]
            for expected in ("/devices", "/register/begin", "/register/finish", "/token/issue",
                             "/envelopes", "/auth/begin", "/auth/finish"):
                assert any(t.startswith(expected) for t in targets), expected
        finally:
            result.close()


class TestTimingReports:
    def make_report(self):
        report = TimingReport(transport="loopback")
        for ms in (100.0, 200.0, 300.0):
            report.add(TimingRow("s", "a", "b", PHASE_SYNC, ms))
        return report

    def test_empty_csv_is_header_only(self):
        data = emit_report(TimingReport(transport="memory"), "csv").decode()
        assert data.strip() == "scenario,sender,receiver,phase,elapsed_ms"

    def test_mean_matches_hand_computed(self):
        report = self.make_report()
        (aggregate,) = report.aggregates()
        assert aggregate == {"phase": PHASE_SYNC, "mean_ms": 200.0, "count": 3}

    def test_json_round_trip(self):
        report = self.make_report()
        parsed = json.loads(emit_report(report, "json"))
        assert parsed["transport"] == "loopback"
        assert len(parsed["rows"]) == 3
        assert parsed["aggregates"][0]["mean_ms"] == 200.0
        assert json.loads(emit_report(report, "json")) == parsed

    def test_markdown_tables(self):
        report = self.make_report()
        report.add(TimingRow("s", "d", "d", PHASE_CHALLENGE, 5.0))
        report.add(TimingRow("s", "d", "d", PHASE_KEYS, 60.0))
        report.add(TimingRow("s", "d", "d", PHASE_ENROLL_TOTAL, 66.0))
        text = emit_report(report, "markdown").decode()
        assert "| Sl. No. | Sender Device | Receiver Device | Time for sync flow (ms) |" in text
        assert "| Sl. No. | Challenge creation (ms) | Keypair, sign and verify (ms) | Total enrollment (ms) |" in text
        assert "| Average | | | 200.0 |" in text
        assert "| 1 | 5.0 | 60.0 | 66.0 |" in text

    def test_negative_elapsed_rejected(self):
        report = TimingReport(transport="memory")
        with pytest.raises(ValueError):
            report.add(TimingRow("s", "a", "b", PHASE_SYNC, -1.0))

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            emit_report(TimingReport(transport="memory"), "yaml")
