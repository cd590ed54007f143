#!/usr/bin/env python3
"""Timing experiment: repeated sync flows plus enrollment ceremonies.

Stands up both servers on loopback, keeps a receiver daemon polling, and
drives N sender syncs, measuring token issue to enrollment complete. Emits
the two measurement tables (markdown) plus a JSON dump if requested.
"""

import argparse
import statistics
import sys

from tushkey.sim.timing import PHASE_SYNC, emit_report, measure_enrollment, measure_sync_flow


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--runs", type=int, default=20)
    parser.add_argument("--enroll-runs", type=int, default=5)
    parser.add_argument("--poll-interval", type=float, default=1.0)
    parser.add_argument("--transport", choices=["loopback", "memory"], default="loopback")
    parser.add_argument("--json-out", default=None, help="also write the raw report as JSON")
    args = parser.parse_args()

    report = measure_sync_flow(
        runs=args.runs, poll_interval=args.poll_interval, transport=args.transport
    )
    report.rows.extend(
        measure_enrollment(runs=args.enroll_runs, transport=args.transport).rows
    )

    values = sorted(r.elapsed_ms for r in report.phase_rows(PHASE_SYNC))
    print(f"sync flow over {len(values)} runs: "
          f"median {statistics.median(values):.0f} ms, "
          f"min {values[0]:.0f} ms, max {values[-1]:.0f} ms")
    print()
    sys.stdout.write(emit_report(report, "markdown").decode())

    if args.json_out:
        with open(args.json_out, "wb") as fh:
            fh.write(emit_report(report, "json"))
        print(f"raw report written to {args.json_out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
