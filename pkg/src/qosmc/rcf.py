"""First-order real-arithmetic formulas over QoS attributes.

Attributes are symbols denoting real values; a registry pairs every
attribute with the associative operator used to accumulate it along a
run.  Formulas are closed under comparison, boolean connectives and
real quantifiers.  Numeric literals are exact rationals so entailment
checks never go through floats.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterator, Mapping, Union


class RcfError(Exception):
    """Malformed formula, term, or registry."""


class RcfParseError(RcfError):
    """Syntax error; carries the offending position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class AggregatorKind(Enum):
    """Associative binary operator accumulating one attribute."""

    SUM = "sum"
    PRODUCT = "product"
    MAX = "max"
    MIN = "min"

    def apply(self, x: Fraction, y: Fraction) -> Fraction:
        if self is AggregatorKind.SUM:
            return x + y
        if self is AggregatorKind.PRODUCT:
            return x * y
        if self is AggregatorKind.MAX:
            return max(x, y)
        return min(x, y)


_IDENT_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*")


class AttributeRegistry:
    """Finite map from attribute name to its aggregation operator."""

    def __init__(self, entries: Mapping[str, AggregatorKind]):
        if not entries:
            raise RcfError("attribute registry must be nonempty")
        for name in entries:
            if not _IDENT_RE.fullmatch(name) or name in ("0", "1"):
                raise RcfError(f"invalid attribute name: {name!r}")
        self._entries = dict(sorted(entries.items()))

    @property
    def entries(self) -> Mapping[str, AggregatorKind]:
        return dict(self._entries)

    def kind(self, name: str) -> AggregatorKind:
        try:
            return self._entries[name]
        except KeyError:
            raise RcfError(f"unknown attribute: {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, AttributeRegistry) and self._entries == other._entries

    def __repr__(self) -> str:
        return f"AttributeRegistry({self._entries!r})"


# --------------------------------------------------------------------------- #
# Terms
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class Const:
    value: Fraction

    def __post_init__(self):
        object.__setattr__(self, "value", Fraction(self.value))


@dataclass(frozen=True)
class Attr:
    """A QoS attribute symbol (not yet tied to a participant/state)."""

    name: str


@dataclass(frozen=True)
class InstAttr:
    """An attribute instantiated at a participant's local state."""

    name: str
    participant: str
    state: str

    def __str__(self) -> str:
        return f"{self.name}[{self.participant},{self.state}]"


@dataclass(frozen=True)
class Var:
    """A quantifier-bound real variable."""

    name: str


@dataclass(frozen=True)
class Add:
    left: "Term"
    right: "Term"


@dataclass(frozen=True)
class Sub:
    left: "Term"
    right: "Term"


@dataclass(frozen=True)
class Mul:
    left: "Term"
    right: "Term"


@dataclass(frozen=True)
class Neg:
    operand: "Term"


Term = Union[Const, Attr, InstAttr, Var, Add, Sub, Mul, Neg]


# --------------------------------------------------------------------------- #
# Formulas
# --------------------------------------------------------------------------- #

_CMP_OPS = ("<", "<=", "=", ">=", ">")


@dataclass(frozen=True)
class Cmp:
    op: str
    left: Term
    right: Term

    def __post_init__(self):
        if self.op not in _CMP_OPS:
            raise RcfError(f"bad comparison operator: {self.op!r}")


@dataclass(frozen=True)
class Not:
    operand: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Exists:
    var: str
    body: "Formula"


@dataclass(frozen=True)
class Forall:
    var: str
    body: "Formula"


Formula = Union[Cmp, Not, And, Or, Implies, Exists, Forall]

#: The trivially valid formula; `true` parses to this.
TRUE = Cmp("=", Const(Fraction(0)), Const(Fraction(0)))


@dataclass(frozen=True)
class QosSpecification:
    """A finite set of constraints attached to one machine state."""

    formulas: frozenset

    @staticmethod
    def of(*formulas: Formula) -> "QosSpecification":
        return QosSpecification(frozenset(formulas))

    def __iter__(self) -> Iterator[Formula]:
        # deterministic iteration keeps downstream output canonical
        return iter(sorted(self.formulas, key=format_formula))


EMPTY_SPEC = QosSpecification(frozenset())


# --------------------------------------------------------------------------- #
# Syntactic walks
# --------------------------------------------------------------------------- #

def _subterms(t: Term) -> Iterator[Term]:
    yield t
    if isinstance(t, (Add, Sub, Mul)):
        yield from _subterms(t.left)
        yield from _subterms(t.right)
    elif isinstance(t, Neg):
        yield from _subterms(t.operand)


def _atoms(f: Formula) -> Iterator[Cmp]:
    if isinstance(f, Cmp):
        yield f
    elif isinstance(f, Not):
        yield from _atoms(f.operand)
    elif isinstance(f, (And, Or, Implies)):
        yield from _atoms(f.left)
        yield from _atoms(f.right)
    elif isinstance(f, (Exists, Forall)):
        yield from _atoms(f.body)
    else:
        raise RcfError(f"not a formula: {f!r}")


def free_attributes(f: Formula) -> frozenset[str]:
    """Attribute symbols syntactically occurring in ``f`` (bound variables excluded)."""
    names = set()
    for atom in _atoms(f):
        for term in (atom.left, atom.right):
            for t in _subterms(term):
                if isinstance(t, Attr):
                    names.add(t.name)
    return frozenset(names)


def instantiated_symbols(f: Formula) -> frozenset[InstAttr]:
    syms = set()
    for atom in _atoms(f):
        for term in (atom.left, atom.right):
            for t in _subterms(term):
                if isinstance(t, InstAttr):
                    syms.add(t)
    return frozenset(syms)


def _map_terms(f: Formula, fn) -> Formula:
    if isinstance(f, Cmp):
        return Cmp(f.op, fn(f.left), fn(f.right))
    if isinstance(f, Not):
        return Not(_map_terms(f.operand, fn))
    if isinstance(f, And):
        return And(_map_terms(f.left, fn), _map_terms(f.right, fn))
    if isinstance(f, Or):
        return Or(_map_terms(f.left, fn), _map_terms(f.right, fn))
    if isinstance(f, Implies):
        return Implies(_map_terms(f.left, fn), _map_terms(f.right, fn))
    if isinstance(f, Exists):
        return Exists(f.var, _map_terms(f.body, fn))
    if isinstance(f, Forall):
        return Forall(f.var, _map_terms(f.body, fn))
    raise RcfError(f"not a formula: {f!r}")


def instantiate(f: Formula, participant: str, state: str) -> Formula:
    """Replace every attribute ``a`` with the instantiated symbol ``a[participant, state]``.

    Bound variables are a separate syntactic category, so the substitution is
    capture-avoiding by construction.  Raises if ``f`` already contains
    instantiated symbols.
    """
    if instantiated_symbols(f):
        raise RcfError("formula already contains instantiated symbols")

    def subst(t: Term) -> Term:
        if isinstance(t, Attr):
            return InstAttr(t.name, participant, state)
        if isinstance(t, (Add, Sub, Mul)):
            return type(t)(subst(t.left), subst(t.right))
        if isinstance(t, Neg):
            return Neg(subst(t.operand))
        return t

    return _map_terms(f, subst)


# --------------------------------------------------------------------------- #
# Pretty printer
# --------------------------------------------------------------------------- #

def format_rational(q: Fraction) -> str:
    q = Fraction(q)
    if q.denominator == 1:
        return str(q.numerator)
    # prefer exact decimal notation when the denominator allows it
    num, den = q.numerator, q.denominator
    d = den
    twos = fives = 0
    while d % 2 == 0:
        d //= 2
        twos += 1
    while d % 5 == 0:
        d //= 5
        fives += 1
    if d == 1:
        k = max(twos, fives)
        scaled = num * 10**k // den
        sign = "-" if scaled < 0 else ""
        digits = str(abs(scaled)).rjust(k + 1, "0")
        return f"{sign}{digits[:-k]}.{digits[-k:]}"
    return f"{num}/{den}"


def format_term(t: Term, parent_prec: int = 0) -> str:
    # precedence: 1 additive, 2 multiplicative, 3 unary minus
    if isinstance(t, Const):
        s = format_rational(t.value)
        return f"({s})" if s.startswith("-") and parent_prec > 0 else s
    if isinstance(t, Attr):
        return t.name
    if isinstance(t, Var):
        return t.name
    if isinstance(t, InstAttr):
        return str(t)
    if isinstance(t, Add):
        s = f"{format_term(t.left, 1)} + {format_term(t.right, 2)}"
        prec = 1
    elif isinstance(t, Sub):
        s = f"{format_term(t.left, 1)} - {format_term(t.right, 2)}"
        prec = 1
    elif isinstance(t, Mul):
        s = f"{format_term(t.left, 2)} * {format_term(t.right, 3)}"
        prec = 2
    elif isinstance(t, Neg):
        s = f"-{format_term(t.operand, 3)}"
        prec = 3
    else:
        raise RcfError(f"not a term: {t!r}")
    return f"({s})" if parent_prec > prec else s


def format_formula(f: Formula, parent_prec: int = 0) -> str:
    # precedence: 1 ->, 2 ||, 3 &&, 4 !/quantifier
    if isinstance(f, Cmp):
        return f"{format_term(f.left)} {f.op} {format_term(f.right)}"
    if isinstance(f, (Exists, Forall)):
        kw = "exists" if isinstance(f, Exists) else "forall"
        s = f"{kw} {f.var} . {format_formula(f.body)}"
        return f"({s})" if parent_prec > 1 else s
    if isinstance(f, Implies):
        s = f"{format_formula(f.left, 2)} -> {format_formula(f.right, 1)}"
        prec = 1
    elif isinstance(f, Or):
        s = f"{format_formula(f.left, 2)} || {format_formula(f.right, 3)}"
        prec = 2
    elif isinstance(f, And):
        s = f"{format_formula(f.left, 3)} && {format_formula(f.right, 4)}"
        prec = 3
    elif isinstance(f, Not):
        s = f"!{format_formula(f.operand, 5)}"
        prec = 4
    else:
        raise RcfError(f"not a formula: {f!r}")
    return f"({s})" if parent_prec > prec else s


# --------------------------------------------------------------------------- #
# Parser
# --------------------------------------------------------------------------- #

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d+)?)"
    r"|(?P<ident>[A-Za-z][A-Za-z0-9_]*)"
    r"|(?P<op><=|>=|->|&&|\|\||[<>=!()+\-*/.]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            at = len(text) - len(stripped)
            raise RcfParseError(f"unexpected character {text[at]!r}", at)
        if m.end() == m.start() and not text[pos:].strip():
            break
        kind = m.lastgroup
        if kind is None:
            break
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    return tokens


class _RcfParser:
    def __init__(self, text: str, registry: AttributeRegistry):
        self.text = text
        self.tokens = _tokenize(text)
        self.registry = registry
        self.pos = 0
        self.bound: list[str] = []

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self):
        tok = self.peek()
        if tok is None:
            raise RcfParseError("unexpected end of input", len(self.text))
        self.pos += 1
        return tok

    def expect(self, value: str):
        tok = self.next()
        if tok[1] != value:
            raise RcfParseError(f"expected {value!r}, found {tok[1]!r}", tok[2])

    def at(self, value: str) -> bool:
        tok = self.peek()
        return tok is not None and tok[1] == value

    # formula := quantified | implies
    def formula(self) -> Formula:
        tok = self.peek()
        if tok is not None and tok[1] in ("exists", "forall"):
            self.next()
            var = self.next()
            if var[0] != "ident":
                raise RcfParseError("expected variable name", var[2])
            self.expect(".")
            self.bound.append(var[1])
            try:
                body = self.formula()
            finally:
                self.bound.pop()
            return Exists(var[1], body) if tok[1] == "exists" else Forall(var[1], body)
        return self.implies()

    def implies(self) -> Formula:
        left = self.disjunction()
        if self.at("->"):
            self.next()
            return Implies(left, self.formula_after_arrow())
        return left

    def formula_after_arrow(self) -> Formula:
        # `->` is right-associative and may be followed by a quantifier
        return self.formula()

    def disjunction(self) -> Formula:
        left = self.conjunction()
        while self.at("||"):
            self.next()
            left = Or(left, self.conjunction())
        return left

    def conjunction(self) -> Formula:
        left = self.negation()
        while self.at("&&"):
            self.next()
            left = And(left, self.negation())
        return left

    def negation(self) -> Formula:
        if self.at("!"):
            self.next()
            return Not(self.negation())
        tok = self.peek()
        if tok is not None and tok[1] in ("exists", "forall"):
            return self.formula()
        return self.primary()

    def primary(self) -> Formula:
        tok = self.peek()
        if tok is None:
            raise RcfParseError("unexpected end of input", len(self.text))
        if tok[1] == "true":
            self.next()
            return TRUE
        # try a comparison first; fall back to a parenthesized formula
        save = self.pos
        try:
            return self.comparison()
        except RcfParseError:
            self.pos = save
        if self.at("("):
            self.next()
            inner = self.formula()
            self.expect(")")
            return inner
        raise RcfParseError(f"expected formula, found {tok[1]!r}", tok[2])

    def comparison(self) -> Cmp:
        left = self.term()
        tok = self.next()
        if tok[1] not in _CMP_OPS:
            raise RcfParseError(f"expected comparison operator, found {tok[1]!r}", tok[2])
        right = self.term()
        return Cmp(tok[1], left, right)

    def term(self) -> Term:
        left = self.factor()
        while True:
            if self.at("+"):
                self.next()
                left = Add(left, self.factor())
            elif self.at("-"):
                self.next()
                left = Sub(left, self.factor())
            else:
                return left

    def factor(self) -> Term:
        left = self.unary()
        while self.at("*"):
            self.next()
            left = Mul(left, self.unary())
        return left

    def unary(self) -> Term:
        if self.at("-"):
            self.next()
            operand = self.unary()
            # negated literals fold so printed constants reparse unchanged
            if isinstance(operand, Const):
                return Const(-operand.value)
            return Neg(operand)
        return self.atom_term()

    def atom_term(self) -> Term:
        tok = self.next()
        if tok[0] == "num":
            value = Fraction(tok[1])
            # p/q literals, for rationals with no finite decimal form
            if self.at("/"):
                self.next()
                den = self.next()
                if den[0] != "num" or "." in den[1]:
                    raise RcfParseError("expected integer denominator", den[2])
                value = value / Fraction(den[1])
            return Const(value)
        if tok[0] == "ident":
            name = tok[1]
            if name in self.bound:
                return Var(name)
            if name in self.registry:
                return Attr(name)
            raise RcfParseError(f"unknown attribute {name!r}", tok[2])
        if tok[1] == "(":
            inner = self.term()
            self.expect(")")
            return inner
        raise RcfParseError(f"expected term, found {tok[1]!r}", tok[2])


def parse_rcf_formula(text: str, registry: AttributeRegistry) -> Formula:
    """Parse the concrete RCF syntax into a formula AST."""
    parser = _RcfParser(text, registry)
    f = parser.formula()
    tok = parser.peek()
    if tok is not None:
        raise RcfParseError(f"trailing input {tok[1]!r}", tok[2])
    return f


def parse_spec(texts: str, registry: AttributeRegistry) -> QosSpecification:
    """Parse a comma-separated list of formulas into a specification."""
    parts = [p for p in _split_top_level(texts) if p.strip()]
    return QosSpecification(frozenset(parse_rcf_formula(p, registry) for p in parts))


def _split_top_level(text: str) -> list[str]:
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append(text[start:i])
            start = i + 1
    parts.append(text[start:])
    return parts
