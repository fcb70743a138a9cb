"""Command-line entry point: ``coopstake run|trace|verify-log|report``.

Exit codes: 0 success, 1 verification failure or unknown transaction,
2 unusable input (invalid scenario, unreadable file), 3 an invariant was
violated during the run.
"""

from __future__ import annotations

import argparse
import json
import sys

from .analysis import NotFound, build_report, format_report, trace_transaction
from .scenario import InvalidScenario, load_scenario
from .simnet.runner import run
from .tamper_log import Authenticator, LogEntry, verify_log

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INPUT = 2
EXIT_INVARIANT = 3


def load_log_export(path: str) -> tuple[str, list[LogEntry], Authenticator]:
    """Read a log written by ``TamperLog.export_json``; raises ``ValueError`` if unusable."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        entries = [LogEntry.from_json(e) for e in doc["entries"]]
        head = doc.get("head")
        if head is None:
            raise ValueError("export carries no signed head")
        return doc["owner"], entries, Authenticator.from_json(head)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
        raise ValueError(f"{path}: {exc.__class__.__name__}: {exc}") from None


def cmd_run(args) -> int:
    try:
        cfg = load_scenario(args.scenario)
    except InvalidScenario as exc:
        for where, msg in exc.errors:
            print(f"invalid scenario: {where}: {msg}", file=sys.stderr)
        return EXIT_INPUT
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    result = run(cfg, args.out)
    print(f"trace digest {result.trace_digest} ({result.trace_records} records) -> {args.out}")
    if result.violations:
        for name, detail in result.violations:
            print(f"invariant violated: {name}: {detail}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_trace(args) -> int:
    try:
        q = trace_transaction(args.out, args.txid)
    except NotFound:
        print(f"transaction {args.txid} not found in {args.out}", file=sys.stderr)
        return EXIT_FAILED
    except FileNotFoundError as exc:
        print(f"no trace: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.json:
        print(json.dumps(q.to_json(), indent=1))
        return EXIT_OK
    for h in q.hops:
        print(f"{h.time:>12} ms  {h.node:<12} {h.action}")
    if q.round_trip_hops is not None:
        print(f"round trip: {q.round_trip_hops} hops, ack after {q.ack_latency} ms")
    print(f"status: {q.describe()}")
    return EXIT_OK


def cmd_verify_log(args) -> int:
    try:
        owner, entries, head = load_log_export(args.file)
    except ValueError as exc:
        print(f"cannot parse log: {exc}", file=sys.stderr)
        return EXIT_INPUT
    rep = verify_log(entries, head)
    print(json.dumps({"owner": owner, "entries": len(entries), **rep.to_json()}))
    return EXIT_OK if rep.ok else EXIT_FAILED


def cmd_report(args) -> int:
    try:
        rep = build_report(args.out)
    except FileNotFoundError as exc:
        print(f"no trace: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.json:
        print(json.dumps(rep, indent=1, sort_keys=True))
    else:
        print(format_report(rep))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coopstake", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write its outputs")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("trace", help="hop chronology of one transaction")
    t.add_argument("--out", required=True)
    t.add_argument("--txid", required=True)
    t.add_argument("--json", action="store_true")
    t.set_defaults(func=cmd_trace)

    v = sub.add_parser("verify-log", help="check an exported justification log")
    v.add_argument("file")
    v.set_defaults(func=cmd_verify_log)

    m = sub.add_parser("report", help="metrics summary of a finished run")
    m.add_argument("--out", required=True)
    m.add_argument("--json", action="store_true")
    m.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
