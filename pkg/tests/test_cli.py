"""Command-line entry points: tushkeyd subcommands, exit codes, tushkey-sim."""

import json
import os
import signal
import subprocess
import sys
import time

import pytest

from tushkey import daemon_cli
from tushkey.sim import cli as sim_cli
from tushkey.sim.world import SimWorld

USER = "user@example.com"


@pytest.fixture
def loopback(tmp_path):
    with SimWorld("loopback", base_dir=tmp_path / "world") as world:
        yield world


def write_config(tmp_path, world, name, **overrides) -> str:
    home = tmp_path / name
    home.mkdir(parents=True, exist_ok=True)
    config = {
        "relay_url": world.relay_url,
        "rp_url": world.rp_url,
        "state_path": str(home / "state.json"),
        "poll_interval": 1,
        "identity": {"kind": "mock", "user_id": USER},
        **overrides,
    }
    path = home / "config.json"
    path.write_text(json.dumps(config))
    return str(path)


class TestTushkeydFlows:
    def test_register_enroll_auth_sync(self, tmp_path, loopback, capsys):
        sender_config = write_config(tmp_path, loopback, "sender")
        receiver_config = write_config(tmp_path, loopback, "receiver")

        assert daemon_cli.main(["register", "--config", sender_config]) == 0
        assert daemon_cli.main(["register", "--config", receiver_config]) == 0
        assert daemon_cli.main(["enroll", "--config", sender_config]) == 0
        assert daemon_cli.main(["auth", "--config", sender_config]) == 0
        assert daemon_cli.main(["sync", "--config", sender_config]) == 0
        out = capsys.readouterr().out
        assert "registered" in out and "enrolled credential" in out and "fan-out complete: 1 ok" in out

    def test_run_subprocess_enrolls_and_shuts_down(self, tmp_path, loopback):
        sender_config = write_config(tmp_path, loopback, "sender")
        receiver_config = write_config(tmp_path, loopback, "receiver")
        assert daemon_cli.main(["register", "--config", sender_config]) == 0
        assert daemon_cli.main(["register", "--config", receiver_config]) == 0
        assert daemon_cli.main(["enroll", "--config", sender_config]) == 0

        process = subprocess.Popen(
            [sys.executable, "-m", "tushkey.daemon_cli", "run", "--config", receiver_config],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
        )
        try:
            time.sleep(0.5)  # let the loop start
            assert daemon_cli.main(["sync", "--config", sender_config]) == 0
            deadline = time.monotonic() + 10
            while time.monotonic() < deadline:
                if loopback.rp_device_count(USER) == 2:
                    break
                time.sleep(0.1)
            assert loopback.rp_device_count(USER) == 2
            assert daemon_cli.main(["auth", "--config", receiver_config]) == 0
        finally:
            process.send_signal(signal.SIGTERM)
            stdout, stderr = process.communicate(timeout=10)
        assert process.returncode == 0, stderr
        assert "shut down cleanly" in stdout


class TestTushkeydExitCodes:
    def test_config_error_is_2(self, tmp_path):
        assert daemon_cli.main(["register", "--config", str(tmp_path / "missing.json")]) == 2

    def test_identity_failure_is_3(self, tmp_path, loopback):
        config = write_config(tmp_path, loopback, "d", identity={"kind": "mock", "user_id": "not-an-email"})
        assert daemon_cli.main(["register", "--config", config]) == 3

    def test_network_failure_is_4(self, tmp_path, loopback):
        config = write_config(tmp_path, loopback, "d", relay_url="http://127.0.0.1:1")
        assert daemon_cli.main(["register", "--config", config]) == 4

    def test_state_corruption_is_5(self, tmp_path, loopback):
        config = write_config(tmp_path, loopback, "d")
        assert daemon_cli.main(["register", "--config", config]) == 0
        state_path = json.loads(open(config).read())["state_path"]
        data = json.loads(open(state_path).read())
        data["dh_private_sealed"] = data["dh_private_sealed"][:-8] + "AAAAAAAA"
        open(state_path, "w").write(json.dumps(data))
        assert daemon_cli.main(["enroll", "--config", config]) == 5

    def test_protocol_failure_is_1(self, tmp_path, loopback):
        config = write_config(tmp_path, loopback, "d")
        assert daemon_cli.main(["register", "--config", config]) == 0
        # authenticate before any enrollment: no local credential
        assert daemon_cli.main(["auth", "--config", config]) == 1


class TestSimCli:
    SCENARIO = {
        "name": "cli-happy",
        "devices": [{"name": "sender"}, {"name": "r1"}],
        "steps": [
            {"action": "enroll", "device": "sender"},
            {"action": "sync", "device": "sender"},
            {"action": "poll", "device": "r1"},
            {"action": "authenticate", "device": "r1"},
        ],
    }

    def test_run_scenario_writes_report(self, tmp_path, capsys):
        scenario_path = tmp_path / "scenario.json"
        scenario_path.write_text(json.dumps(self.SCENARIO))
        report_path = tmp_path / "report.json"
        code = sim_cli.main([
            "run", "--scenario", str(scenario_path), "--transport", "memory",
            "--report", str(report_path),
        ])
        assert code == 0
        report = json.loads(report_path.read_text())
        assert any(r["phase"] == "sync_flow" for r in report["rows"])
        out = capsys.readouterr().out
        assert "wire exchanges recorded" in out

    def test_run_scenario_markdown_to_stdout(self, tmp_path, capsys):
        scenario_path = tmp_path / "scenario.json"
        scenario_path.write_text(json.dumps(self.SCENARIO))
        code = sim_cli.main(["run", "--scenario", str(scenario_path), "--format", "markdown"])
        assert code == 0
        assert "## Sync time" in capsys.readouterr().out

    def test_missing_scenario_is_2(self, tmp_path):
        assert sim_cli.main(["run", "--scenario", str(tmp_path / "none.json")]) == 2

    def test_adversary_command(self, capsys):
        assert sim_cli.main(["adversary"]) == 0
        out = capsys.readouterr().out
        assert "6/6 adversarial properties hold" in out

    def test_timing_command_quick(self, tmp_path, capsys):
        report_path = tmp_path / "timing.md"
        code = sim_cli.main([
            "timing", "--runs", "2", "--enroll-runs", "1",
            "--poll-interval", "1", "--report", str(report_path),
        ])
        assert code == 0
        text = report_path.read_text()
        assert "## Sync time" in text and "## Device enrollment time" in text


class TestInstalledEntryPoints:
    def test_console_scripts_respond(self):
        env = dict(os.environ)
        result = subprocess.run(
            [sys.executable, "-m", "tushkey.daemon_cli", "--help"],
            capture_output=True, text=True, env=env,
        )
        assert result.returncode == 0 and "tushkeyd" in result.stdout
        result = subprocess.run(
            [sys.executable, "-m", "tushkey.sim.cli", "--help"],
            capture_output=True, text=True, env=env,
        )
        assert result.returncode == 0 and "tushkey-sim" in result.stdout
