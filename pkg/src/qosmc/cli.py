"""Command-line front end.

Subcommands: ``check`` (bounded satisfiability / validity), ``runs``
(run enumeration), ``member`` (choreography word membership) and
``aggregate`` (QoS context of a trace).  Exit codes: 0 success verdict,
1 negative verdict, 2 input error, 3 solver error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from typing import Optional

from . import choreography as chor
from . import logic, machines
from .aggregation import aggregate
from .logic import (
    COUNTEREXAMPLE,
    SAT,
    UNSAT_UP_TO_BOUND,
    VALID_UP_TO_BOUND,
    Verdict,
)
from .machines import (
    QosSystem,
    Run,
    default_qos_states,
    parse_system,
    parse_trace,
    replay,
    trace,
)
from .smt import SolverError, SolverSession, default_solver_command


class InputError(Exception):
    pass


@dataclass
class CheckReport:
    verdict: str
    bound: int
    witness: Optional[Run]
    wall_ms: float
    solver_calls: int

    def to_dict(self) -> dict:
        doc = {
            "verdict": self.verdict,
            "bound": self.bound,
            "trace": None,
            "stats": {
                "wall_ms": round(self.wall_ms, 1),
                "solver_calls": self.solver_calls,
            },
        }
        if self.witness is not None:
            doc["trace"] = [
                {
                    "label": str(label),
                    "control": config.control_map(),
                    "buffers": {
                        f"{a}{b}": list(msgs)
                        for (a, b), msgs in config.buffer_map().items()
                    },
                }
                for (label, config) in self.witness.steps
            ]
        return doc

    def format_text(self) -> str:
        lines = [f"verdict: {self.verdict}", f"bound: {self.bound}"]
        if self.witness is not None:
            lines.append("trace:")
            if not self.witness.steps:
                lines.append("  (empty run)")
            for (label, config) in self.witness.steps:
                control = " ".join(f"{p}={q}" for p, q in config.control)
                buffers = " ".join(
                    f"{a}{b}=<{','.join(msgs)}>" for (a, b), msgs in config.buffers
                )
                suffix = f" | {buffers}" if buffers else ""
                lines.append(f"  {label}  ->  {control}{suffix}")
        lines.append(
            f"stats: wall_ms={self.wall_ms:.1f} solver_calls={self.solver_calls}"
        )
        return "\n".join(lines)


def _read_file(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return handle.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def _load_system(path: str) -> QosSystem:
    try:
        system = parse_system(_read_file(path))
    except machines.SystemError_ as exc:
        raise InputError(f"{path}: {exc}") from exc
    defaulted = default_qos_states(system)
    for name, states in defaulted.items():
        print(
            f"note: machine {name!r} defaults to the empty qos specification "
            f"on states {states}",
            file=sys.stderr,
        )
    return system


def _solver_session(args) -> SolverSession:
    command = None
    if args.solver:
        import shlex

        command = shlex.split(args.solver)
    else:
        command = default_solver_command(args.timeout_ms)
    return SolverSession(command, timeout_ms=args.timeout_ms)


def cmd_check(args) -> int:
    system = _load_system(args.system)
    try:
        phi = logic.parse_ql(_read_file(args.formula), system.registry)
    except (logic.QlParseError, logic.LogicError) as exc:
        raise InputError(f"{args.formula}: {exc}") from exc
    started = time.monotonic()
    with _solver_session(args) as session:
        try:
            if args.mode == "sat":
                verdict = logic.q_sat(
                    phi, system, args.k, session, args.require_empty_buffers
                )
            else:
                verdict = logic.check_valid(
                    phi, system, args.k, session, args.require_empty_buffers
                )
        except logic.LogicError as exc:
            raise InputError(str(exc)) from exc
        report = CheckReport(
            verdict=verdict.result,
            bound=verdict.bound,
            witness=verdict.witness,
            wall_ms=(time.monotonic() - started) * 1000.0,
            solver_calls=session.queries,
        )
    if args.format == "json":
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    else:
        print(report.format_text())
    return 0 if verdict.result in (SAT, VALID_UP_TO_BOUND) else 1


def cmd_runs(args) -> int:
    system = _load_system(args.system)
    rows = []
    for run in machines.enumerate_runs(system, args.k):
        final = machines.is_final(system, run.last, args.require_empty_buffers)
        rows.append((run, final))
    if args.format == "json":
        doc = [
            {
                "trace": [str(label) for label in trace(run)],
                "final": final,
            }
            for run, final in rows
        ]
        print(json.dumps(doc, indent=2))
    else:
        for run, final in rows:
            labels = " ".join(str(label) for label in trace(run)) or "(empty)"
            marker = "  [final]" if final else ""
            print(f"{labels}{marker}")
    return 0


def cmd_member(args) -> int:
    try:
        g = chor.parse_gchor(_read_file(args.choreography))
    except chor.ChoreographyError as exc:
        raise InputError(f"{args.choreography}: {exc}") from exc
    names = chor.participants(g)
    try:
        word = parse_trace(args.trace, names)
    except machines.SystemError_ as exc:
        raise InputError(str(exc)) from exc
    if args.mode == "prefix":
        ok = chor.is_prefix_word(g, word)
        explanation = "a prefix word" if ok else "not a prefix word"
    else:
        ok = chor.is_maximal_word(g, word)
        explanation = "a maximal word" if ok else "not a maximal word"
    rendered = " ".join(str(label) for label in word) or "(empty)"
    if args.format == "json":
        print(json.dumps({"trace": rendered, "mode": args.mode, "member": ok}))
    else:
        print(f"{rendered}: {explanation}")
    return 0 if ok else 1


def cmd_aggregate(args) -> int:
    system = _load_system(args.system)
    try:
        word = parse_trace(args.trace, frozenset(system.participant_names))
        run = replay(system, word)
    except machines.SystemError_ as exc:
        raise InputError(str(exc)) from exc
    context = aggregate(system, run)
    if args.format == "json":
        from .rcf import format_formula

        doc = {
            "local": sorted(format_formula(f) for f in context.local),
            "aggregates": {attr: str(expr) for attr, expr in context.aggregates},
        }
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        print(context.format())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qosmc",
        description=(
            "Bounded model checking of quantitative properties of "
            "asynchronous message-passing systems."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, solver=False):
        p.add_argument(
            "--format", choices=("text", "json"), default="text",
            help="output format (default: text)",
        )
        p.add_argument(
            "--require-empty-buffers", action="store_true",
            help="final configurations must also have empty channels",
        )
        if solver:
            p.add_argument(
                "--solver", default=None,
                help="solver command accepting SMT-LIB 2 on stdin "
                "(default: bundled z3, or $QOSMC_SOLVER)",
            )
            p.add_argument(
                "--timeout-ms", type=int, default=120_000,
                help="per-query solver timeout in milliseconds",
            )

    p = sub.add_parser("check", help="check a QL formula against a system")
    p.add_argument("system", help="system file (.cfsm)")
    p.add_argument("formula", help="formula file (.ql)")
    p.add_argument("-k", type=int, required=True, help="run-length bound")
    p.add_argument(
        "--mode", choices=("sat", "valid"), default="valid",
        help="satisfiability search or validity by refutation (default: valid)",
    )
    common(p, solver=True)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("runs", help="enumerate runs up to a bound")
    p.add_argument("system", help="system file (.cfsm)")
    p.add_argument("-k", type=int, required=True, help="run-length bound")
    common(p)
    p.set_defaults(func=cmd_runs)

    p = sub.add_parser("member", help="word membership for a choreography")
    p.add_argument("choreography", help="choreography file (.gc)")
    p.add_argument("trace", help="space-separated labels, e.g. 'ab!m ab?m'")
    p.add_argument(
        "--mode", choices=("prefix", "maximal"), default="prefix",
        help="prefix-language or maximal-word membership (default: prefix)",
    )
    common(p)
    p.set_defaults(func=cmd_member)

    p = sub.add_parser("aggregate", help="print the QoS context of a trace")
    p.add_argument("system", help="system file (.cfsm)")
    p.add_argument("trace", help="space-separated labels")
    common(p)
    p.set_defaults(func=cmd_aggregate)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (machines.SystemError_, chor.ChoreographyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
