"""Aggregation of per-state QoS contracts along a run.

A finite run yields a *QoS context*: the union of every visited local
contract, instantiated at its (participant, state), plus one aggregate
equation per attribute combining instantiated symbols with that
attribute's operator.  Per step only the acting participant contributes
an operand; the final configuration contributes one operand for every
participant.
"""

from __future__ import annotations

from dataclasses import dataclass

from .machines import QosSystem, Run, validate_run
from .rcf import (
    AggregatorKind,
    Formula,
    InstAttr,
    format_formula,
    instantiate,
    instantiated_symbols,
)


@dataclass(frozen=True)
class AggregateExpr:
    """A fold of instantiated symbols under one associative operator.

    Kept symbolic so the context stays solver-agnostic; the solver layer
    decides how max/min folds are encoded.
    """

    kind: AggregatorKind
    operands: tuple[InstAttr, ...]

    def __str__(self) -> str:
        if self.kind is AggregatorKind.SUM:
            return " + ".join(str(o) for o in self.operands)
        if self.kind is AggregatorKind.PRODUCT:
            return " * ".join(str(o) for o in self.operands)
        inner = ", ".join(str(o) for o in self.operands)
        return f"{self.kind.value}{{{inner}}}"


@dataclass(frozen=True)
class QosContext:
    """The instantiated local constraints and aggregate equations of a run."""

    local: frozenset  # of instantiated Formula
    aggregates: tuple[tuple[str, AggregateExpr], ...]  # attribute -> fold, sorted
    symbols: frozenset[InstAttr]

    def aggregate_map(self) -> dict[str, AggregateExpr]:
        return dict(self.aggregates)

    def format(self) -> str:
        lines = ["local:"]
        for f in sorted(self.local, key=format_formula):
            lines.append(f"  {format_formula(f)}")
        lines.append("aggregates:")
        for attr, expr in self.aggregates:
            lines.append(f"  {attr} = {expr}")
        return "\n".join(lines)


def aggregate(system: QosSystem, run: Run) -> QosContext:
    """The QoS context induced by ``run`` (which must be a run of ``system``)."""
    validate_run(system, run)
    names = system.participant_names  # lexicographically sorted
    n = len(run)

    local: set[Formula] = set()
    seen: set[tuple[str, str]] = set()
    for i in range(n + 1):
        config = run.configuration(i)
        for p in names:
            state = config.state(p)
            if (p, state) in seen:
                continue
            seen.add((p, state))
            for f in system.participants[p].qos[state]:
                local.add(instantiate(f, p, state))

    aggregates = []
    symbols: set[InstAttr] = set()
    for attr in system.registry:
        kind = system.registry.kind(attr)
        operands: list[InstAttr] = []
        # one operand per step, charged to the acting participant
        for i in range(n):
            label = run.steps[i][0]
            actor = label.subject
            operands.append(InstAttr(attr, actor, run.configuration(i).state(actor)))
        # the final configuration charges every participant once
        last = run.configuration(n)
        for p in names:
            operands.append(InstAttr(attr, p, last.state(p)))
        aggregates.append((attr, AggregateExpr(kind, tuple(operands))))
        symbols.update(operands)
    for f in local:
        symbols.update(instantiated_symbols(f))

    return QosContext(frozenset(local), tuple(aggregates), frozenset(symbols))
