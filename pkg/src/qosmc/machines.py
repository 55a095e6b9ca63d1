"""Communicating finite-state machines with per-state QoS contracts.

A system maps each participant to a machine whose transitions are that
participant's own sends and receives.  Communication is asynchronous
over unbounded FIFO channels; a configuration tracks every control
state and every buffer.  Run enumeration is breadth-first with a
label-lexicographic tie-break so witnesses are reproducible.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Mapping, Optional

from .choreography import Label, Word
from .rcf import (
    EMPTY_SPEC,
    AggregatorKind,
    AttributeRegistry,
    QosSpecification,
    free_attributes,
    parse_spec,
)


class SystemError_(Exception):
    """Invalid machine, system, or run."""


class SystemParseError(SystemError_):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class Cfsm:
    """A finite transition system local to one participant."""

    def __init__(
        self,
        owner: str,
        states: frozenset[str],
        initial: str,
        transitions: frozenset[tuple[str, Label, str]],
    ):
        if initial not in states:
            raise SystemError_(f"initial state {initial!r} not among states")
        seen: dict[tuple[str, Label], str] = {}
        for (src, label, dst) in transitions:
            if src not in states or dst not in states:
                raise SystemError_(f"transition endpoint outside states: {src}->{dst}")
            if label.subject != owner:
                raise SystemError_(
                    f"machine for {owner!r} has transition {label} "
                    f"with subject {label.subject!r}"
                )
            if (src, label) in seen and seen[(src, label)] != dst:
                raise SystemError_(
                    f"nondeterministic transitions from {src!r} on {label}"
                )
            seen[(src, label)] = dst
        self.owner = owner
        self.states = states
        self.initial = initial
        self.transitions = transitions
        self._by_source: dict[str, list[tuple[Label, str]]] = {}
        for (src, label, dst) in sorted(transitions, key=lambda t: (t[0], str(t[1]))):
            self._by_source.setdefault(src, []).append((label, dst))

    def successor(self, state: str, label: Label) -> Optional[str]:
        for (lab, dst) in self._by_source.get(state, ()):
            if lab == label:
                return dst
        return None

    def outgoing(self, state: str) -> list[tuple[Label, str]]:
        return list(self._by_source.get(state, ()))


class QosCfsm:
    """A machine plus final states and a total state-to-contract map."""

    def __init__(
        self,
        machine: Cfsm,
        finals: frozenset[str],
        qos: Mapping[str, QosSpecification],
    ):
        if not finals <= machine.states:
            raise SystemError_("final states must be machine states")
        missing = machine.states - set(qos)
        if missing:
            raise SystemError_(f"qos map not total; missing {sorted(missing)}")
        self.machine = machine
        self.finals = finals
        self.qos = dict(qos)


class QosSystem:
    """Participants' QoS-extended machines plus the attribute registry."""

    def __init__(
        self, participants: Mapping[str, QosCfsm], registry: AttributeRegistry
    ):
        if len(participants) < 2:
            raise SystemError_("a system needs at least two participants")
        for name, qcfsm in participants.items():
            if qcfsm.machine.owner != name:
                raise SystemError_(
                    f"machine owned by {qcfsm.machine.owner!r} mapped to {name!r}"
                )
            for spec in qcfsm.qos.values():
                for f in spec:
                    unknown = free_attributes(f) - frozenset(registry)
                    if unknown:
                        raise SystemError_(
                            f"unregistered attributes {sorted(unknown)} in "
                            f"qos of {name!r}"
                        )
        self.participants = dict(sorted(participants.items()))
        self.registry = registry

    @property
    def participant_names(self) -> list[str]:
        return list(self.participants)

    def machine(self, p: str) -> Cfsm:
        return self.participants[p].machine

    def messages(self) -> frozenset[str]:
        return frozenset(
            label.message
            for qcfsm in self.participants.values()
            for (_, label, _) in qcfsm.machine.transitions
        )


@dataclass(frozen=True)
class Configuration:
    """Control state of every participant plus the content of every channel."""

    control: tuple[tuple[str, str], ...]
    buffers: tuple[tuple[tuple[str, str], tuple[str, ...]], ...]

    @staticmethod
    def make(
        control: Mapping[str, str],
        buffers: Mapping[tuple[str, str], tuple[str, ...]] | None = None,
    ) -> "Configuration":
        buffers = buffers or {}
        return Configuration(
            tuple(sorted(control.items())),
            tuple(sorted((ch, tuple(msgs)) for ch, msgs in buffers.items() if msgs)),
        )

    def state(self, participant: str) -> str:
        for (p, q) in self.control:
            if p == participant:
                return q
        raise KeyError(participant)

    def buffer(self, channel: tuple[str, str]) -> tuple[str, ...]:
        for (ch, msgs) in self.buffers:
            if ch == channel:
                return msgs
        return ()

    def control_map(self) -> dict[str, str]:
        return dict(self.control)

    def buffer_map(self) -> dict[tuple[str, str], tuple[str, ...]]:
        return dict(self.buffers)


@dataclass(frozen=True)
class Run:
    """A start configuration and the fired transitions, in order."""

    start: Configuration
    steps: tuple[tuple[Label, Configuration], ...]

    def __len__(self) -> int:
        return len(self.steps)

    def configuration(self, index: int) -> Configuration:
        """The configuration after ``index`` steps."""
        return self.start if index == 0 else self.steps[index - 1][1]

    @property
    def last(self) -> Configuration:
        return self.configuration(len(self.steps))

    def prefix(self, length: int) -> "Run":
        if not 0 <= length <= len(self.steps):
            raise SystemError_(f"prefix length {length} out of range")
        return Run(self.start, self.steps[:length])

    def is_prefix_of(self, other: "Run") -> bool:
        return (
            self.start == other.start
            and self.steps == other.steps[: len(self.steps)]
        )


def trace(run: Run) -> Word:
    return tuple(label for (label, _) in run.steps)


def initial_configuration(system: QosSystem) -> Configuration:
    return Configuration.make(
        {p: q.machine.initial for p, q in system.participants.items()}
    )


def step(
    system: QosSystem, config: Configuration, label: Label
) -> Optional[Configuration]:
    """The successor configuration, or None when ``label`` is not enabled."""
    actor = label.subject
    if actor not in system.participants:
        return None
    machine = system.machine(actor)
    dst = machine.successor(config.state(actor), label)
    if dst is None:
        return None
    control = config.control_map()
    buffers = config.buffer_map()
    channel = label.channel
    if label.output:
        control[actor] = dst
        buffers[channel] = config.buffer(channel) + (label.message,)
    else:
        pending = config.buffer(channel)
        if not pending or pending[0] != label.message:
            return None
        control[actor] = dst
        buffers[channel] = pending[1:]
    return Configuration.make(control, buffers)


def enabled(system: QosSystem, config: Configuration) -> list[Label]:
    """All fireable labels, sorted for canonical exploration order."""
    labels = set()
    for p, qcfsm in system.participants.items():
        for (label, _) in qcfsm.machine.outgoing(config.state(p)):
            if step(system, config, label) is not None:
                labels.add(label)
    return sorted(labels, key=str)


def is_final(
    system: QosSystem, config: Configuration, require_empty_buffers: bool = False
) -> bool:
    if require_empty_buffers and config.buffers:
        return False
    return all(
        config.state(p) in qcfsm.finals for p, qcfsm in system.participants.items()
    )


def enumerate_runs(system: QosSystem, k: int) -> Iterator[Run]:
    """All runs of length <= k from the initial configuration.

    Breadth-first; within one length, runs come in lexicographic order of
    their label sequences.
    """
    if k < 0:
        raise SystemError_("bound must be nonnegative")
    frontier = [Run(initial_configuration(system), ())]
    yield frontier[0]
    for _ in range(k):
        next_frontier = []
        for run in frontier:
            config = run.last
            for label in enabled(system, config):
                succ = step(system, config, label)
                assert succ is not None
                extended = Run(run.start, run.steps + ((label, succ),))
                next_frontier.append(extended)
                yield extended
        frontier = next_frontier
        if not frontier:
            break


def replay(system: QosSystem, word: Word) -> Run:
    """Reconstruct the unique run firing ``word`` from the initial configuration."""
    config = initial_configuration(system)
    steps = []
    for i, label in enumerate(word):
        succ = step(system, config, label)
        if succ is None:
            raise SystemError_(f"label {label} not enabled at step {i}")
        steps.append((label, succ))
        config = succ
    return Run(initial_configuration(system), tuple(steps))


def validate_run(system: QosSystem, run: Run) -> None:
    """Raise unless ``run`` is a run of ``system`` from its initial configuration."""
    if replay(system, trace(run)) != run:
        raise SystemError_("run was not generated by this system")


# --------------------------------------------------------------------------- #
# Label parsing against a known participant set
# --------------------------------------------------------------------------- #

def parse_label(text: str, participant_names: frozenset[str]) -> Label:
    """Parse ``AB!m`` / ``AB?m`` by splitting the channel into two known names."""
    m = re.fullmatch(r"([A-Za-z][A-Za-z0-9_]*)([!?])([A-Za-z][A-Za-z0-9_]*)", text)
    if m is None:
        raise SystemError_(f"malformed label {text!r}")
    channel, mark, message = m.groups()
    splits = [
        (channel[:i], channel[i:])
        for i in range(1, len(channel))
        if channel[:i] in participant_names and channel[i:] in participant_names
    ]
    if not splits:
        raise SystemError_(f"no participant split for channel {channel!r}")
    if len(splits) > 1:
        raise SystemError_(f"ambiguous participant split for channel {channel!r}")
    sender, receiver = splits[0]
    return Label(sender, receiver, message, mark == "!")


def parse_trace(text: str, participant_names: frozenset[str]) -> Word:
    return tuple(
        parse_label(part, participant_names) for part in text.split() if part
    )


# --------------------------------------------------------------------------- #
# System file parser
# --------------------------------------------------------------------------- #

_SYS_TOKEN_RE = re.compile(
    r"\s*(?:(?P<comment>#[^\n]*)"
    r"|(?P<num>\d+(?:\.\d+)?)"
    r"|(?P<ident>[A-Za-z][A-Za-z0-9_]*)"
    r"|(?P<op><=|>=|->|&&|\|\||[{}();:,!?<>=+\-*/.]))"
)


def _sys_tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _SYS_TOKEN_RE.match(text, pos)
        if m is None or m.lastgroup is None:
            at = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise SystemParseError(f"unexpected character {text[at]!r}", at)
        if m.lastgroup != "comment":
            tokens.append((m.lastgroup, m.group(m.lastgroup), m.start(m.lastgroup)))
        pos = m.end()
    return tokens


class _SystemParser:
    """Parser for the ``.cfsm`` system format.

    Layout::

        system
        attributes { t: sum; c: sum; m: max; }
        machine a {
          initial q0;
          finals q1;
          q0 ab!m q1;
          qos q0 { c <= 5, m = 0 }
        }
    """

    def __init__(self, text: str):
        self.text = text
        self.tokens = _sys_tokenize(text)
        self.pos = 0
        # participant names are needed up front to split channel labels
        self.participant_names = frozenset(
            tok2[1]
            for tok1, tok2 in zip(self.tokens, self.tokens[1:])
            if tok1[1] == "machine" and tok2[0] == "ident"
        )

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self):
        tok = self.peek()
        if tok is None:
            raise SystemParseError("unexpected end of input", len(self.text))
        self.pos += 1
        return tok

    def expect(self, value: str):
        tok = self.next()
        if tok[1] != value:
            raise SystemParseError(f"expected {value!r}, found {tok[1]!r}", tok[2])

    def at(self, value: str) -> bool:
        tok = self.peek()
        return tok is not None and tok[1] == value

    def parse(self) -> QosSystem:
        self.expect("system")
        registry = self.attributes()
        machines: dict[str, QosCfsm] = {}
        while self.at("machine"):
            name, qcfsm = self.machine(registry)
            if name in machines:
                raise SystemParseError(f"duplicate machine {name!r}", self.peek()[2] if self.peek() else 0)
            machines[name] = qcfsm
        tok = self.peek()
        if tok is not None:
            raise SystemParseError(f"trailing input {tok[1]!r}", tok[2])
        return QosSystem(machines, registry)

    def attributes(self) -> AttributeRegistry:
        self.expect("attributes")
        self.expect("{")
        entries: dict[str, AggregatorKind] = {}
        while not self.at("}"):
            name = self.next()
            if name[0] != "ident":
                raise SystemParseError("expected attribute name", name[2])
            self.expect(":")
            kind = self.next()
            try:
                entries[name[1]] = AggregatorKind(kind[1])
            except ValueError:
                raise SystemParseError(
                    f"unknown aggregation operator {kind[1]!r}", kind[2]
                ) from None
            self.expect(";")
        self.expect("}")
        return AttributeRegistry(entries)

    def machine(self, registry: AttributeRegistry) -> tuple[str, QosCfsm]:
        self.expect("machine")
        name_tok = self.next()
        if name_tok[0] != "ident":
            raise SystemParseError("expected participant name", name_tok[2])
        owner = name_tok[1]
        self.expect("{")
        initial: Optional[str] = None
        finals: frozenset[str] = frozenset()
        transitions: list[tuple[str, Label, str]] = []
        qos: dict[str, QosSpecification] = {}
        states: set[str] = set()
        while not self.at("}"):
            tok = self.next()
            if tok[1] == "initial":
                if initial is not None:
                    raise SystemParseError("duplicate initial declaration", tok[2])
                initial = self.next()[1]
                states.add(initial)
                self.expect(";")
            elif tok[1] == "finals":
                names = [self.next()[1]]
                while self.at(","):
                    self.next()
                    names.append(self.next()[1])
                finals = frozenset(names)
                states.update(names)
                self.expect(";")
            elif tok[1] == "qos":
                state = self.next()[1]
                states.add(state)
                if state in qos:
                    raise SystemParseError(f"duplicate qos for state {state!r}", tok[2])
                qos[state] = self.qos_block(registry)
            elif tok[0] == "ident":
                src = tok[1]
                label = self.label()
                dst_tok = self.next()
                if dst_tok[0] != "ident":
                    raise SystemParseError("expected target state", dst_tok[2])
                self.expect(";")
                states.update((src, dst_tok[1]))
                transitions.append((src, label, dst_tok[1]))
            else:
                raise SystemParseError(f"unexpected token {tok[1]!r}", tok[2])
        self.expect("}")
        if initial is None:
            raise SystemParseError(f"machine {owner!r} missing initial state", name_tok[2])
        full_qos = {q: qos.get(q, EMPTY_SPEC) for q in states}
        cfsm = Cfsm(owner, frozenset(states), initial, frozenset(transitions))
        return owner, QosCfsm(cfsm, finals, full_qos)

    def label(self) -> Label:
        chan_tok = self.next()
        if chan_tok[0] != "ident":
            raise SystemParseError("expected channel", chan_tok[2])
        mark_tok = self.next()
        if mark_tok[1] not in ("!", "?"):
            raise SystemParseError("expected ! or ?", mark_tok[2])
        msg_tok = self.next()
        if msg_tok[0] != "ident":
            raise SystemParseError("expected message type", msg_tok[2])
        try:
            return parse_label(
                f"{chan_tok[1]}{mark_tok[1]}{msg_tok[1]}", self.participant_names
            )
        except SystemError_ as exc:
            raise SystemParseError(str(exc), chan_tok[2]) from None

    def qos_block(self, registry: AttributeRegistry) -> QosSpecification:
        self.expect("{")
        # hand the raw source slice to the formula parser
        depth = 1
        start_tok = self.peek()
        if start_tok is None:
            raise SystemParseError("unterminated qos block", len(self.text))
        start = start_tok[2]
        end = start
        while depth > 0:
            tok = self.next()
            if tok[1] == "{":
                depth += 1
            elif tok[1] == "}":
                depth -= 1
            end = tok[2]
        body = self.text[start:end]
        if not body.strip():
            return EMPTY_SPEC
        try:
            return parse_spec(body, registry)
        except Exception as exc:
            raise SystemParseError(f"bad qos block: {exc}", start) from None


def parse_system(text: str) -> QosSystem:
    return _SystemParser(text).parse()


def default_qos_states(system: QosSystem) -> dict[str, list[str]]:
    """States whose contract defaulted to the empty specification, per participant."""
    result = {}
    for name, qcfsm in system.participants.items():
        empty = [q for q, spec in qcfsm.qos.items() if not spec.formulas]
        if empty:
            result[name] = sorted(empty)
    return result
