"""Command-line front end.

Exit codes: 0 clean run, 1 reports emitted (bugs found or run failed),
2 usage error, 3 unsupported workload.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import RuntimeConfig
from .errors import ConfigError, UnsupportedWorkload
from .repl import Debugger
from .workloads import BUILTINS, get_workload, load_scenario, run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rewind",
        description="record, replay, and debug multithreaded workloads in-process")
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="record a workload and replay on evidence")
    runp.add_argument("workload", nargs="?", default=None,
                      help=f"builtin workload name ({', '.join(sorted(BUILTINS))})")
    runp.add_argument("--scenario", metavar="FILE", help="JSON scenario file")
    runp.add_argument("--log-budget", type=int, default=None, metavar="N",
                      help="pre-allocated event entries per thread")
    runp.add_argument("--quarantine-bytes", type=int, default=None, metavar="N",
                      help="per-thread quarantine budget before reuse")
    runp.add_argument("--canary-byte", default=None, metavar="0xNN",
                      help="canary fill byte")
    runp.add_argument("--max-attempts", type=int, default=None, metavar="N",
                      help="replay search bound (0 = unlimited)")
    runp.add_argument("--seed", type=int, default=None, metavar="N")
    runp.add_argument("--trace-epochs", action="store_true",
                      help="print one JSON line per closed epoch")
    runp.add_argument("--dump-log", metavar="PATH", help="write the recorded event log")
    runp.add_argument("--replay-report", metavar="PATH",
                      help="write per-attempt replay search reports")
    runp.add_argument("--vfs-in", metavar="DIR", help="seed the virtual FS from a directory")
    runp.add_argument("--vfs-out", metavar="DIR", help="dump the final virtual FS")
    runp.add_argument("--no-record", action="store_true",
                      help="bare execution: no logs, epochs, or detectors")
    runp.add_argument("--interactive", action="store_true",
                      help="pause in the debugger REPL at epoch boundaries and faults")
    runp.add_argument("--interactive-json", action="store_true",
                      help="interactive mode with JSON-wrapped prompts/responses")

    repp = sub.add_parser("report", help="trial batches with CSV + figure output")
    repp.add_argument("kind", choices=["race-search", "overhead"])
    repp.add_argument("--out", default="reports", metavar="DIR")
    repp.add_argument("--trials", type=int, default=200, help="race-search trials")
    repp.add_argument("--runs", type=int, default=10, help="overhead runs per mode")
    repp.add_argument("--seed", type=int, default=0)
    return parser


def _build_config(args) -> RuntimeConfig:
    cfg = RuntimeConfig()
    if args.log_budget is not None:
        cfg = cfg.replace(log_budget=args.log_budget)
    if args.quarantine_bytes is not None:
        cfg = cfg.replace(quarantine_bytes=args.quarantine_bytes)
    if args.canary_byte is not None:
        cfg = cfg.replace(canary_byte=int(args.canary_byte, 0))
    if args.max_attempts is not None:
        cfg = cfg.replace(max_attempts=args.max_attempts)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.trace_epochs:
        cfg = cfg.replace(trace_epochs=True)
    if args.no_record:
        cfg = cfg.replace(recording=False)
    return cfg


def _cmd_run(args) -> int:
    if bool(args.workload) == bool(args.scenario):
        print("error: give exactly one of a workload name or --scenario", file=sys.stderr)
        return 2
    spec = load_scenario(args.scenario) if args.scenario else get_workload(args.workload)
    config = _build_config(args)

    debugger = None
    if args.interactive or args.interactive_json:
        debugger = Debugger(json_mode=args.interactive_json)

    summary = run(spec, config, debugger=debugger,
                  vfs_in=args.vfs_in, vfs_out=args.vfs_out)

    if args.dump_log:
        with open(args.dump_log, "w") as fh:
            for line in summary.recorded_dump:
                fh.write(json.dumps(line, sort_keys=False) + "\n")
    if args.replay_report:
        with open(args.replay_report, "w") as fh:
            json.dump(summary.replay_searches, fh, indent=2)

    for report in summary.reports:
        print(json.dumps(report, sort_keys=False))
        print(_describe_report(report), file=sys.stderr)
    print(json.dumps({
        "workload": summary.name,
        "ok": summary.ok,
        "epochs": len(summary.epochs),
        "events": summary.event_count,
        "final_arena_hash": summary.final_arena_hash,
        "final_vfs_digest": summary.final_vfs_digest,
        "heap": summary.heap_stats,
    }, sort_keys=False))
    return 1 if (summary.reports or not summary.ok) else 0


def _describe_report(report: dict) -> str:
    if report["type"] == "fault":
        return (f"fault [{report['kind']}] in thread {report['thread']} at "
                f"{report['step']}: {report['message']} "
                f"(reproduced={report['reproduced']}, "
                f"{report['replay_attempts']} replay attempt(s))")
    writer = report.get("writer")
    who = (f"written by thread {writer['thread']} at {writer['step']} "
           f"(value 0x{writer['value_hex']})" if writer else "writer not localized")
    freed = f", freed at {report['free_site']}" if report.get("free_site") else ""
    return (f"{report['type']} at offset 0x{report['address']:x}: expected canary "
            f"0x{report['expected']:02x}, found 0x{report['found']:02x}; "
            f"allocated at {report['alloc_site']}{freed}; {who} "
            f"[{report['replay_attempts']} replay attempt(s)]")


def _cmd_report(args) -> int:
    from . import report as report_mod
    if args.kind == "race-search":
        summary = report_mod.race_search_report(args.trials, args.out, seed=args.seed)
    else:
        summary = report_mod.overhead_report(args.runs, args.out)
    print(json.dumps(summary, sort_keys=False))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_report(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except UnsupportedWorkload as exc:
        print(f"unsupported workload: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
