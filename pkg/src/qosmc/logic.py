"""QL formulas and their bounded evaluation.

QL is a linear-temporal logic whose until operator is indexed by a
g-choreography; atoms are real-arithmetic constraints discharged by
entailment from the aggregated context of the current run prefix.
``q_sat`` enumerates runs up to a bound and reports the first (in
canonical order) final-ending run satisfying the formula; validity is
checked by satisfiability of the negation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union

from . import choreography as chor
from .aggregation import aggregate
from .choreography import GChor, WordMembership
from .machines import QosSystem, Run, enumerate_runs, is_final, trace
from .rcf import AttributeRegistry, Formula, RcfParseError, free_attributes
from .rcf import _RcfParser  # reused for atom parsing inside QL text
from .smt import SolverSession, entails


class LogicError(Exception):
    pass


class QlParseError(LogicError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


# --------------------------------------------------------------------------- #
# Abstract syntax (core connectives; sugar is desugared on construction)
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class Top:
    pass


@dataclass(frozen=True)
class Atom:
    formula: Formula


@dataclass(frozen=True)
class QlNot:
    operand: "QlFormula"


@dataclass(frozen=True)
class QlOr:
    left: "QlFormula"
    right: "QlFormula"


@dataclass(frozen=True)
class Until:
    left: "QlFormula"
    chor: GChor
    right: "QlFormula"


QlFormula = Union[Top, Atom, QlNot, QlOr, Until]

TOP = Top()


def ql_and(left: QlFormula, right: QlFormula) -> QlFormula:
    return QlNot(QlOr(QlNot(left), QlNot(right)))


def ql_implies(left: QlFormula, right: QlFormula) -> QlFormula:
    return QlOr(QlNot(left), right)


def diamond(g: GChor, phi: QlFormula) -> QlFormula:
    return Until(TOP, g, phi)


def box(g: GChor, phi: QlFormula) -> QlFormula:
    return QlNot(Until(TOP, g, QlNot(phi)))


def desugar(phi: QlFormula) -> QlFormula:
    """Identity on the core grammar; sugar is already desugared structurally."""
    return phi


def subformulas(phi: QlFormula):
    yield phi
    if isinstance(phi, QlNot):
        yield from subformulas(phi.operand)
    elif isinstance(phi, QlOr):
        yield from subformulas(phi.left)
        yield from subformulas(phi.right)
    elif isinstance(phi, Until):
        yield from subformulas(phi.left)
        yield from subformulas(phi.right)


def choreographies(phi: QlFormula):
    for sub in subformulas(phi):
        if isinstance(sub, Until):
            yield sub.chor


def is_star_free(phi: QlFormula) -> bool:
    return all(chor.is_star_free(g) for g in choreographies(phi))


def validate_against(phi: QlFormula, system: QosSystem) -> None:
    """Reject formulas mentioning participants or messages foreign to the system."""
    participants = frozenset(system.participant_names)
    messages = system.messages()
    for g in choreographies(phi):
        extra_p = chor.participants(g) - participants
        if extra_p:
            raise LogicError(f"unknown participants in formula: {sorted(extra_p)}")
        extra_m = frozenset(i.message for i in chor.interactions(g)) - messages
        if extra_m:
            raise LogicError(f"unknown message types in formula: {sorted(extra_m)}")
    for sub in subformulas(phi):
        if isinstance(sub, Atom):
            unknown = free_attributes(sub.formula) - frozenset(system.registry)
            if unknown:
                raise LogicError(f"unregistered attributes in atom: {sorted(unknown)}")


def format_ql(phi: QlFormula, parent_prec: int = 0) -> str:
    # precedence: 1 U, 2 ||, 3 !
    if isinstance(phi, Top):
        return "true"
    if isinstance(phi, Atom):
        from .rcf import format_formula

        return f"({format_formula(phi.formula)})"
    if isinstance(phi, QlNot):
        return f"!{format_ql(phi.operand, 4)}"
    if isinstance(phi, QlOr):
        s = f"{format_ql(phi.left, 3)} || {format_ql(phi.right, 2)}"
        return f"({s})" if parent_prec > 2 else s
    s = (
        f"{format_ql(phi.left, 2)} U{{{chor.format_gchor(phi.chor)}}} "
        f"{format_ql(phi.right, 1)}"
    )
    return f"({s})" if parent_prec > 1 else s


# --------------------------------------------------------------------------- #
# Verdicts
# --------------------------------------------------------------------------- #

SAT = "sat"
UNSAT_UP_TO_BOUND = "unsat-up-to-bound"
VALID_UP_TO_BOUND = "valid-up-to-bound"
COUNTEREXAMPLE = "counterexample"


@dataclass(frozen=True)
class Verdict:
    result: str
    witness: Optional[Run]
    bound: int

    def __post_init__(self):
        has_witness = self.result in (SAT, COUNTEREXAMPLE)
        if has_witness != (self.witness is not None):
            raise LogicError(f"verdict {self.result!r} witness mismatch")


# --------------------------------------------------------------------------- #
# Evaluation
# --------------------------------------------------------------------------- #

class Evaluator:
    """Bounded evaluation against one system with memoized entailment.

    Atom entailment depends only on the run prefix, so results are cached
    per (trace prefix, goal); until-scans revisit overlapping prefixes
    heavily.
    """

    def __init__(self, system: QosSystem, session: SolverSession):
        self.system = system
        self.session = session
        self.membership = WordMembership()
        self._entail_cache: dict[tuple, bool] = {}
        self._context_cache: dict[tuple, object] = {}

    def _context(self, pi: Run, prefix_len: int):
        key = trace(pi)[:prefix_len]
        if key not in self._context_cache:
            self._context_cache[key] = aggregate(self.system, pi.prefix(prefix_len))
        return self._context_cache[key]

    def _entails(self, pi: Run, prefix_len: int, psi: Formula) -> bool:
        key = (trace(pi)[:prefix_len], psi)
        if key not in self._entail_cache:
            self._entail_cache[key] = entails(
                self._context(pi, prefix_len), psi, self.session
            )
        return self._entail_cache[key]

    def models(self, phi: QlFormula, pi: Run, prefix_len: int) -> bool:
        if isinstance(phi, Top):
            return True
        if isinstance(phi, Atom):
            return self._entails(pi, prefix_len, phi.formula)
        if isinstance(phi, QlNot):
            return not self.models(phi.operand, pi, prefix_len)
        if isinstance(phi, QlOr):
            return self.models(phi.left, pi, prefix_len) or self.models(
                phi.right, pi, prefix_len
            )
        if isinstance(phi, Until):
            return self.until(phi.left, phi.chor, phi.right, pi, prefix_len, 0)
        raise LogicError(f"not a QL formula: {phi!r}")

    def until(
        self,
        phi1: QlFormula,
        g: GChor,
        phi2: QlFormula,
        pi: Run,
        prefix_len: int,
        ext_len: int,
    ) -> bool:
        """Scan forward along ``pi`` for an extension accepted by ``g``."""
        while True:
            ext_word = trace(pi)[prefix_len : prefix_len + ext_len]
            if self.membership.is_maximal(g, ext_word) and self.models(
                phi2, pi, prefix_len + ext_len
            ):
                return True
            if not self.models(phi1, pi, prefix_len + ext_len):
                return False
            if prefix_len + ext_len == len(pi):
                return False
            next_label = pi.steps[prefix_len + ext_len][0]
            if not self.membership.is_prefix(g, ext_word + (next_label,)):
                return False
            ext_len += 1

    # ---------------- reference semantics (used as a test oracle) ---------- #

    def oracle_models(self, phi: QlFormula, pi: Run, prefix_len: int) -> bool:
        if isinstance(phi, Top):
            return True
        if isinstance(phi, Atom):
            return self._entails(pi, prefix_len, phi.formula)
        if isinstance(phi, QlNot):
            return not self.oracle_models(phi.operand, pi, prefix_len)
        if isinstance(phi, QlOr):
            return self.oracle_models(phi.left, pi, prefix_len) or self.oracle_models(
                phi.right, pi, prefix_len
            )
        if isinstance(phi, Until):
            labels = trace(pi)
            for ext_len in range(0, len(pi) - prefix_len + 1):
                ext_word = labels[prefix_len : prefix_len + ext_len]
                if not self.membership.is_maximal(phi.chor, ext_word):
                    continue
                if not self.oracle_models(phi.right, pi, prefix_len + ext_len):
                    continue
                if all(
                    self.oracle_models(phi.left, pi, prefix_len + j)
                    for j in range(ext_len)
                ):
                    return True
            return False
        raise LogicError(f"not a QL formula: {phi!r}")


def _prefix_length(pi: Run, prefix: Run) -> int:
    if not prefix.is_prefix_of(pi):
        raise LogicError("prefix is not a prefix of the run")
    return len(prefix)


def q_models(
    phi: QlFormula,
    system: QosSystem,
    pi: Run,
    prefix: Run,
    session: SolverSession,
) -> bool:
    return Evaluator(system, session).models(phi, pi, _prefix_length(pi, prefix))


def q_until(
    phi1: QlFormula,
    g: GChor,
    phi2: QlFormula,
    system: QosSystem,
    pi: Run,
    prefix: Run,
    ext: Run,
    session: SolverSession,
) -> bool:
    prefix_len = _prefix_length(pi, prefix)
    full = pi.prefix(prefix_len + len(ext))
    if trace(full)[prefix_len:] != trace(ext):
        raise LogicError("extension does not continue the prefix along the run")
    return Evaluator(system, session).until(
        phi1, g, phi2, pi, prefix_len, len(ext)
    )


def oracle_models(
    phi: QlFormula,
    system: QosSystem,
    pi: Run,
    prefix: Run,
    session: SolverSession,
) -> bool:
    return Evaluator(system, session).oracle_models(
        phi, pi, _prefix_length(pi, prefix)
    )


def q_sat(
    phi: QlFormula,
    system: QosSystem,
    k: int,
    session: SolverSession,
    require_empty_buffers: bool = False,
    evaluator: Optional[Evaluator] = None,
) -> Verdict:
    """Search runs of length <= k ending in a final configuration."""
    if k < 0:
        raise LogicError("bound must be nonnegative")
    validate_against(phi, system)
    ev = evaluator or Evaluator(system, session)
    for run in enumerate_runs(system, k):
        if not is_final(system, run.last, require_empty_buffers):
            continue
        if ev.models(phi, run, 0):
            return Verdict(SAT, run, k)
    return Verdict(UNSAT_UP_TO_BOUND, None, k)


def check_valid(
    phi: QlFormula,
    system: QosSystem,
    k: int,
    session: SolverSession,
    require_empty_buffers: bool = False,
) -> Verdict:
    """Bounded model checking: validity via satisfiability of the negation."""
    negated = q_sat(QlNot(phi), system, k, session, require_empty_buffers)
    if negated.result == SAT:
        return Verdict(COUNTEREXAMPLE, negated.witness, k)
    return Verdict(VALID_UP_TO_BOUND, None, k)


# --------------------------------------------------------------------------- #
# Parser
# --------------------------------------------------------------------------- #

class _QlParser:
    """Parser for QL formula files.

    A file is zero or more ``let <name> = <g-choreography>;`` bindings
    followed by one formula.  Atoms are comparisons or quantified RCF
    formulas; ``U{G}``, ``<G>`` and ``[G]`` carry choreography indexes,
    with bound names usable wherever a choreography is expected.
    """

    def __init__(self, text: str, registry: AttributeRegistry):
        self.text = text
        self.registry = registry
        self.tokens = self._tokenize(text)
        self.pos = 0
        self.bindings: dict[str, GChor] = {}

    @staticmethod
    def _tokenize(text: str):
        tokens = []
        pos = 0
        pattern = re.compile(
            r"\s*(?:(?P<comment>#[^\n]*)"
            r"|(?P<num>\d+(?:\.\d+)?)"
            r"|(?P<ident>[A-Za-z][A-Za-z0-9_]*)"
            r"|(?P<op><=|>=|->|&&|\|\||[{}()\[\];:,!?<>=+\-*/.]))"
        )
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            m = pattern.match(text, pos)
            if m is None or m.lastgroup is None:
                at = pos + len(text[pos:]) - len(text[pos:].lstrip())
                raise QlParseError(f"unexpected character {text[at]!r}", at)
            if m.lastgroup != "comment":
                tokens.append((m.lastgroup, m.group(m.lastgroup), m.start(m.lastgroup)))
            pos = m.end()
        return tokens

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self):
        tok = self.peek()
        if tok is None:
            raise QlParseError("unexpected end of input", len(self.text))
        self.pos += 1
        return tok

    def expect(self, value: str):
        tok = self.next()
        if tok[1] != value:
            raise QlParseError(f"expected {value!r}, found {tok[1]!r}", tok[2])

    def at(self, value: str) -> bool:
        tok = self.peek()
        return tok is not None and tok[1] == value

    def parse(self) -> QlFormula:
        while self.at("let"):
            self.next()
            name = self.next()
            if name[0] != "ident":
                raise QlParseError("expected binding name", name[2])
            self.expect("=")
            self.bindings[name[1]] = self.binding_body()
        phi = self.formula()
        tok = self.peek()
        if tok is not None:
            raise QlParseError(f"trailing input {tok[1]!r}", tok[2])
        return phi

    def binding_body(self) -> GChor:
        """One ``let`` body: the rest of the line, ended by ``;``.

        ``;`` doubles as the sequencing operator, so bindings are
        line-based: the body runs to the last ``;`` on the current line.
        """
        start_tok = self.peek()
        if start_tok is None:
            raise QlParseError("expected choreography", len(self.text))
        newline = self.text.find("\n", start_tok[2])
        limit = newline if newline != -1 else len(self.text)
        consumed = []
        while self.peek() is not None and self.peek()[2] < limit:
            consumed.append(self.next())
        if not consumed or consumed[-1][1] != ";":
            raise QlParseError(
                "binding must end with ';' on the same line", start_tok[2]
            )
        source = self.text[start_tok[2] : consumed[-1][2]]
        return self._parse_gc_source(source, start_tok[2])

    def _parse_gc_source(self, source: str, errpos: int) -> GChor:
        try:
            return chor.parse_gchor(self._expand_bindings(source))
        except chor.ChoreographyParseError as exc:
            raise QlParseError(f"bad choreography: {exc}", errpos) from None

    def gchor_until(self, *closers: str) -> GChor:
        """Collect the source slice up to an unnested closer and parse it."""
        depth = 0
        start_tok = self.peek()
        if start_tok is None:
            raise QlParseError("expected choreography", len(self.text))
        start = start_tok[2]
        end = start
        while True:
            tok = self.peek()
            if tok is None:
                raise QlParseError("unterminated choreography", len(self.text))
            if depth == 0 and tok[1] in closers:
                break
            if tok[1] == "(":
                depth += 1
            elif tok[1] == ")":
                depth -= 1
            end = tok[2] + len(tok[1])
            self.next()
        return self._parse_gc_source(self.text[start:end], start)

    def _expand_bindings(self, source: str) -> str:
        # bound names are plain identifiers not followed by -> or :
        def expand(m: re.Match) -> str:
            name = m.group(0)
            if name in self.bindings:
                rest = source[m.end():].lstrip()
                if not rest.startswith("->") and not rest.startswith(":"):
                    prior = source[: m.start()].rstrip()
                    if not prior.endswith("->") and not prior.endswith(":"):
                        return f"({chor.format_gchor(self.bindings[name])})"
            return name

        return re.sub(r"[A-Za-z][A-Za-z0-9_]*", expand, source)

    def formula(self) -> QlFormula:
        return self.implies()

    def implies(self) -> QlFormula:
        left = self.until_level()
        if self.at("->"):
            self.next()
            return ql_implies(left, self.implies())
        return left

    def until_level(self) -> QlFormula:
        left = self.disjunction()
        if self.at("U"):
            self.next()
            self.expect("{")
            g = self.gchor_until("}")
            self.expect("}")
            return Until(left, g, self.until_level())
        return left

    def disjunction(self) -> QlFormula:
        left = self.conjunction()
        while self.at("||"):
            self.next()
            left = QlOr(left, self.conjunction())
        return left

    def conjunction(self) -> QlFormula:
        left = self.unary()
        while self.at("&&"):
            self.next()
            left = ql_and(left, self.unary())
        return left

    def unary(self) -> QlFormula:
        if self.at("!"):
            self.next()
            return QlNot(self.unary())
        if self.at("<"):
            save = self.pos
            self.next()
            try:
                g = self.gchor_until(">")
                self.expect(">")
                return diamond(g, self.unary())
            except QlParseError:
                self.pos = save
        if self.at("["):
            self.next()
            g = self.gchor_until("]")
            self.expect("]")
            return box(g, self.unary())
        return self.primary()

    def primary(self) -> QlFormula:
        tok = self.peek()
        if tok is None:
            raise QlParseError("unexpected end of input", len(self.text))
        if tok[1] == "true":
            self.next()
            return TOP
        # try an RCF atom over the source text at this position
        save = self.pos
        atom = self._try_atom()
        if atom is not None:
            return atom
        self.pos = save
        if self.at("("):
            self.next()
            inner = self.formula()
            self.expect(")")
            return inner
        raise QlParseError(f"expected formula, found {tok[1]!r}", tok[2])

    def _try_atom(self) -> Optional[Atom]:
        # run the RCF parser directly over our token stream; it stops (or
        # fails) at the first token outside the RCF grammar
        sub = _RcfParser("", self.registry)
        sub.text = self.text
        sub.tokens = self.tokens
        sub.pos = self.pos
        try:
            tok0 = sub.peek()
            if tok0 is not None and tok0[1] in ("exists", "forall"):
                f = sub.formula()
            else:
                f = sub.comparison()
        except RcfParseError:
            return None
        self.pos = sub.pos
        return Atom(f)


def parse_ql(text: str, registry: AttributeRegistry) -> QlFormula:
    return _QlParser(text, registry).parse()
