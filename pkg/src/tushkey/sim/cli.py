"""tushkey-sim: scenario runner, adversary suite, timing experiments."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .adversary import adversary_suite
from .scenario import Scenario, ScenarioError, run_scenario
from .timing import emit_report, measure_enrollment, measure_sync_flow


def _write_report(report, path: str | None, fmt: str) -> None:
    payload = emit_report(report, fmt)
    if path:
        Path(path).write_bytes(payload)
        print(f"report written to {path}")
    else:
        sys.stdout.write(payload.decode())


def cmd_run(args) -> int:
    try:
        scenario = Scenario.from_file(args.scenario)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    result = run_scenario(scenario, transport=args.transport)
    try:
        for outcome in result.outcomes:
            status = "ok" if outcome.ok else f"FAILED: {outcome.detail}"
            extra = f" (+{outcome.enrolled} enrolled)" if outcome.enrolled else ""
            print(f"  {outcome.action:<14} {outcome.device or '-':<12} {status}{extra}")
        if result.aborted:
            print("scenario aborted after failure")
        print(f"{len(result.transcript)} wire exchanges recorded")
        _write_report(result.report, args.report, args.format)
        return 0 if not result.failures else 1
    finally:
        result.close()


def cmd_adversary(args) -> int:
    results = adversary_suite()
    for result in results:
        print(f"  {'PASS' if result.passed else 'FAIL'}  {result.name}: {result.detail}")
    passed = sum(1 for r in results if r.passed)
    print(f"{passed}/{len(results)} adversarial properties hold")
    return 0 if passed == len(results) else 1


def cmd_timing(args) -> int:
    sync_report = measure_sync_flow(
        runs=args.runs, poll_interval=args.poll_interval, transport=args.transport
    )
    enroll_report = measure_enrollment(runs=args.enroll_runs, transport=args.transport)
    sync_report.rows.extend(enroll_report.rows)
    rows = sync_report.phase_rows("sync_flow")
    values = sorted(r.elapsed_ms for r in rows)
    median = values[len(values) // 2] if values else 0.0
    print(f"sync_flow over {len(rows)} runs: median {median:.0f} ms")
    _write_report(sync_report, args.report, args.format)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="tushkey-sim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="execute a scenario file")
    run_parser.add_argument("--scenario", required=True)
    run_parser.add_argument("--transport", choices=["loopback", "memory"], default="memory")
    run_parser.add_argument("--report", default=None, help="write the timing report here")
    run_parser.add_argument("--format", choices=["json", "csv", "markdown"], default="json")

    sub.add_parser("adversary", help="run the adversarial property checks")

    timing_parser = sub.add_parser("timing", help="measure sync and enrollment timings")
    timing_parser.add_argument("--runs", type=int, default=20)
    timing_parser.add_argument("--enroll-runs", type=int, default=5)
    timing_parser.add_argument("--poll-interval", type=float, default=1.0)
    timing_parser.add_argument("--transport", choices=["loopback", "memory"], default="loopback")
    timing_parser.add_argument("--report", default=None)
    timing_parser.add_argument("--format", choices=["json", "csv", "markdown"], default="markdown")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING)
    handlers = {"run": cmd_run, "adversary": cmd_adversary, "timing": cmd_timing}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
