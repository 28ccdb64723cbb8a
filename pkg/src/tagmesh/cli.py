"""Command-line front end.

    tagmesh run <file> [--trace-out PATH] [--stats]
    tagmesh trace <file> --out PATH
    tagmesh verify --template NAME --seed N --trials N [--jobs N]
                   [--corrupt-tag-join]
    tagmesh report [--out-dir DIR] [--seed N]

Exit codes: 0 success; 1 usage or parse error; 2 the workload faulted
(blinded command, tag mixing, bad address); 3 the final memory did not
match the workload's expected records; 4 the verifier found at least one
non-interference counterexample.

Everything lands on standard output except trace files and report files,
and every byte of output is a deterministic function of the arguments.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .verify import TEMPLATES, fuzz_noninterference
from .workload import Workload, WorkloadError, load_workload

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAULT = 2
EXIT_MISMATCH = 3
EXIT_COUNTEREXAMPLE = 4


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; the contract here says 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    p = _Parser(prog="tagmesh",
                description="Tag-propagating systolic matmul simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a workload file")
    run.add_argument("file")
    run.add_argument("--trace-out", metavar="PATH",
                     help="also write the per-cycle trace here")
    run.add_argument("--stats", action="store_true",
                     help="print the full stats block")

    trace = sub.add_parser("trace", help="execute and write a cycle trace")
    trace.add_argument("file")
    trace.add_argument("--out", metavar="PATH", required=True)

    verify = sub.add_parser("verify", help="fuzz the non-interference property")
    verify.add_argument("--template", required=True,
                        help=f"one of: {', '.join(sorted(TEMPLATES))}")
    verify.add_argument("--seed", type=int, required=True)
    verify.add_argument("--trials", type=int, required=True)
    verify.add_argument("--jobs", type=int, default=1)
    verify.add_argument("--corrupt-tag-join", action="store_true",
                        help="stub tag_join to 0 first; the run must then fail")

    report = sub.add_parser("report", help="write instrumentation CSVs and figures")
    report.add_argument("--out-dir", default="reports")
    report.add_argument("--seed", type=int, default=7)
    return p


def _execute(workload: Workload, trace_path: Optional[str],
             show_stats: bool) -> int:
    trace_lines: list[str] = []
    hook = trace_lines.append if trace_path else None
    ctl = workload.make_controller(trace_hook=hook)
    obs, stats = ctl.run(workload.commands)
    if trace_path:
        with open(trace_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(trace_lines))
            if trace_lines:
                fh.write("\n")
    print(f"cycles {stats.total_cycles}")
    if show_stats:
        print(f"mvin {stats.mvin_count}  mvout {stats.mvout_count}  "
              f"preload {stats.preload_count}  compute {stats.compute_count} "
              f"({stats.compute_rows} rows)")
        print(f"tag registers {stats.tag_registers_used} "
              f"(per-PE equivalent {stats.per_pe_equivalent_registers})")
    if obs.fault is not None:
        f = obs.fault
        print(f"fault: {f.kind.value} at cycle {f.cycle}: {f.detail}")
        return EXIT_FAULT
    if workload.expected is not None:
        mismatches = 0
        for rec in workload.expected:
            got = ctl.mem.peek(rec["addr"])
            want_tag = rec.get("tag", 0)
            if got.data != rec["data"] or got.tag != want_tag:
                mismatches += 1
                print(f"mismatch at {rec['addr']}: "
                      f"0x{got.data:016x}/{got.tag} != "
                      f"0x{rec['data']:016x}/{want_tag}")
        if mismatches:
            print(f"{mismatches} expected-result mismatches")
            return EXIT_MISMATCH
        print(f"expected: {len(workload.expected)} words match")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command in ("run", "trace"):
        try:
            w = load_workload(args.file)
        except WorkloadError as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_USAGE
        if args.command == "trace":
            return _execute(w, args.out, show_stats=False)
        return _execute(w, args.trace_out, args.stats)

    if args.command == "verify":
        if args.trials < 1:
            print("error: --trials must be at least 1", file=sys.stderr)
            return EXIT_USAGE
        if args.template not in TEMPLATES:
            print(f"error: unknown template {args.template!r}", file=sys.stderr)
            return EXIT_USAGE
        if args.jobs < 1:
            print("error: --jobs must be at least 1", file=sys.stderr)
            return EXIT_USAGE
        report = fuzz_noninterference(
            args.template, args.seed, args.trials, jobs=args.jobs,
            corrupt_tag_join=args.corrupt_tag_join)
        sys.stdout.write(report.text())
        return EXIT_OK if report.passed else EXIT_COUNTEREXAMPLE

    # report
    from .report import write_reports  # matplotlib import deferred to use

    try:
        paths = write_reports(args.out_dir, args.seed)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
