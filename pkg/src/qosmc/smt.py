"""Entailment of QoS constraints by refutation through an SMT solver.

A context entails a goal when the context's constraints together with
the negated goal are unsatisfiable over the reals.  The solver is an
external child process spoken to over the SMT-LIB 2 text protocol; by
default a bundled z3 (WebAssembly, run under node) is used, but any
binary accepting SMT-LIB 2 on stdin can be substituted via the
``QOSMC_SOLVER`` environment variable or the CLI flag.
"""

from __future__ import annotations

import os
import selectors
import shlex
import subprocess
from fractions import Fraction
from importlib import resources
from typing import Optional, Sequence

from .aggregation import AggregateExpr, QosContext
from .rcf import (
    Add,
    AggregatorKind,
    And,
    Attr,
    Cmp,
    Const,
    Exists,
    Forall,
    Formula,
    Implies,
    InstAttr,
    Mul,
    Neg,
    Not,
    Or,
    RcfError,
    Sub,
    Term,
    Var,
    format_formula,
    free_attributes,
)


class SolverError(Exception):
    """Base for all solver-side failures; never coerced to a verdict."""


class SolverTimeout(SolverError):
    pass


class SolverUnknown(SolverError):
    pass


class SolverProtocolError(SolverError):
    pass


# --------------------------------------------------------------------------- #
# SMT-LIB rendering
# --------------------------------------------------------------------------- #

def mangle(sym: InstAttr) -> str:
    """Wire identifier for an instantiated symbol; attribute names render bare."""
    return f"{sym.name}__{sym.participant}__{sym.state}"


def _render_rational(q: Fraction) -> str:
    if q < 0:
        return f"(- {_render_rational(-q)})"
    if q.denominator == 1:
        return f"{q.numerator}.0"
    return f"(/ {q.numerator}.0 {q.denominator}.0)"


def render_term(t: Term) -> str:
    if isinstance(t, Const):
        return _render_rational(t.value)
    if isinstance(t, Attr):
        return t.name
    if isinstance(t, InstAttr):
        return mangle(t)
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Add):
        return f"(+ {render_term(t.left)} {render_term(t.right)})"
    if isinstance(t, Sub):
        return f"(- {render_term(t.left)} {render_term(t.right)})"
    if isinstance(t, Mul):
        return f"(* {render_term(t.left)} {render_term(t.right)})"
    if isinstance(t, Neg):
        return f"(- {render_term(t.operand)})"
    raise RcfError(f"not a term: {t!r}")


def render_formula(f: Formula) -> str:
    if isinstance(f, Cmp):
        return f"({f.op} {render_term(f.left)} {render_term(f.right)})"
    if isinstance(f, Not):
        return f"(not {render_formula(f.operand)})"
    if isinstance(f, And):
        return f"(and {render_formula(f.left)} {render_formula(f.right)})"
    if isinstance(f, Or):
        return f"(or {render_formula(f.left)} {render_formula(f.right)})"
    if isinstance(f, Implies):
        return f"(=> {render_formula(f.left)} {render_formula(f.right)})"
    if isinstance(f, Exists):
        return f"(exists (({f.var} Real)) {render_formula(f.body)})"
    if isinstance(f, Forall):
        return f"(forall (({f.var} Real)) {render_formula(f.body)})"
    raise RcfError(f"not a formula: {f!r}")


def _has_quantifier(f: Formula) -> bool:
    if isinstance(f, (Exists, Forall)):
        return True
    if isinstance(f, Cmp):
        return False
    if isinstance(f, Not):
        return _has_quantifier(f.operand)
    if isinstance(f, (And, Or, Implies)):
        return _has_quantifier(f.left) or _has_quantifier(f.right)
    raise RcfError(f"not a formula: {f!r}")


def _render_aggregate(attr: str, expr: AggregateExpr) -> list[str]:
    ops = [mangle(o) for o in expr.operands]
    if expr.kind is AggregatorKind.SUM:
        folded = ops[0] if len(ops) == 1 else "(+ " + " ".join(ops) + ")"
        return [f"(assert (= {attr} {folded}))"]
    if expr.kind is AggregatorKind.PRODUCT:
        folded = ops[0] if len(ops) == 1 else "(* " + " ".join(ops) + ")"
        return [f"(assert (= {attr} {folded}))"]
    # max / min: the aggregate bounds every operand and equals one of them
    rel = ">=" if expr.kind is AggregatorKind.MAX else "<="
    bounds = " ".join(f"({rel} {attr} {o})" for o in ops)
    picks = " ".join(f"(= {attr} {o})" for o in ops)
    if len(ops) == 1:
        return [f"(assert (= {attr} {ops[0]}))"]
    return [f"(assert (and {bounds} (or {picks})))"]


def encode_query(ctx: QosContext, psi: Formula) -> str:
    """Deterministic SMT-LIB 2 script refuting ``ctx |- psi``."""
    quantified = _has_quantifier(psi) or any(_has_quantifier(f) for f in ctx.local)
    lines = [f"(set-logic {'NRA' if quantified else 'QF_NRA'})"]
    for sym in sorted(ctx.symbols, key=mangle):
        lines.append(f"(declare-const {mangle(sym)} Real)")
    for attr, _ in ctx.aggregates:
        lines.append(f"(declare-const {attr} Real)")
    for f in sorted(ctx.local, key=format_formula):
        lines.append(f"(assert {render_formula(f)})")
    for attr, expr in ctx.aggregates:
        lines.extend(_render_aggregate(attr, expr))
    lines.append(f"(assert (not {render_formula(psi)}))")
    lines.append("(check-sat)")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------- #
# Solver session
# --------------------------------------------------------------------------- #

def bundled_solver_command(timeout_ms: int = 0) -> list[str]:
    wrapper = resources.files("qosmc").joinpath("solvers/z3wasm.js")
    cmd = ["node", str(wrapper)]
    if timeout_ms > 0:
        cmd.append(str(timeout_ms))
    return cmd


def default_solver_command(timeout_ms: int = 0) -> list[str]:
    override = os.environ.get("QOSMC_SOLVER")
    if override:
        return shlex.split(override)
    return bundled_solver_command(timeout_ms)


class SolverSession:
    """One child solver process; at most one query in flight.

    Queries are delimited with ``(reset)`` so a session can serve many
    checks while each query still runs against a fresh assertion stack.
    """

    def __init__(
        self,
        command: Optional[Sequence[str]] = None,
        timeout_ms: int = 120_000,
    ):
        self.timeout_ms = timeout_ms
        self.command = list(command) if command else default_solver_command(timeout_ms)
        env = dict(os.environ)
        # the bundled wrapper resolves z3-solver from the global npm tree
        node_path = env.get("NODE_PATH", "")
        global_modules = "/usr/lib/node_modules"
        if global_modules not in node_path.split(os.pathsep):
            env["NODE_PATH"] = (
                f"{node_path}{os.pathsep}{global_modules}" if node_path else global_modules
            )
        try:
            self.process = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                env=env,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise SolverProtocolError(f"cannot start solver {self.command}: {exc}") from exc
        self.queries = 0

    def check_sat(self, script: str) -> bool:
        """True when the script is satisfiable; raises on unknown/timeout."""
        if self.process.poll() is not None:
            raise SolverProtocolError("solver process has exited")
        self.queries += 1
        assert self.process.stdin is not None and self.process.stdout is not None
        try:
            self.process.stdin.write(script)
            if not script.endswith("\n"):
                self.process.stdin.write("\n")
            self.process.stdin.write("(reset)\n")
            self.process.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise SolverProtocolError(f"solver pipe failed: {exc}") from exc
        line = self._read_line()
        if line == "sat":
            return True
        if line == "unsat":
            return False
        if line == "unknown":
            raise SolverUnknown("solver answered unknown")
        raise SolverProtocolError(f"unexpected solver answer: {line!r}")

    def _read_line(self) -> str:
        assert self.process.stdout is not None
        sel = selectors.DefaultSelector()
        sel.register(self.process.stdout, selectors.EVENT_READ)
        deadline = self.timeout_ms / 1000.0
        ready = sel.select(timeout=deadline if deadline > 0 else None)
        sel.close()
        if not ready:
            self.close()
            raise SolverTimeout(f"no answer within {self.timeout_ms} ms")
        line = self.process.stdout.readline()
        if line == "":
            raise SolverProtocolError("solver closed its output")
        return line.strip()

    def close(self) -> None:
        if self.process.poll() is None:
            try:
                if self.process.stdin is not None:
                    self.process.stdin.write("(exit)\n")
                    self.process.stdin.flush()
            except (BrokenPipeError, OSError):
                pass
            try:
                self.process.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self.process.kill()

    def __enter__(self) -> "SolverSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def entails(ctx: QosContext, psi: Formula, session: SolverSession) -> bool:
    """Does the aggregated context entail ``psi`` over the reals?"""
    registered = {attr for attr, _ in ctx.aggregates}
    unknown = free_attributes(psi) - registered
    if unknown:
        raise RcfError(f"goal uses unregistered attributes {sorted(unknown)}")
    return not session.check_sat(encode_query(ctx, psi))
