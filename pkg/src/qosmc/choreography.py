"""Global choreographies and their prefix/maximal word recognizers.

A choreography term denotes a set of partially ordered communication
events.  Sequential composition is *weak*: it only orders events that
share the same subject participant, so an output of the second operand
may overtake unrelated actions of the first.  Words are checked for
membership by embedding them into a downward-closed portion of one of
the unfolded pomsets.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Union


class ChoreographyError(Exception):
    pass


class ChoreographyParseError(ChoreographyError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


@dataclass(frozen=True)
class Label:
    """A communication action: output ``AB!m`` or input ``AB?m``."""

    sender: str
    receiver: str
    message: str
    output: bool

    def __post_init__(self):
        if self.sender == self.receiver:
            raise ChoreographyError(
                f"sender and receiver must differ: {self.sender!r}"
            )

    @property
    def subject(self) -> str:
        """The participant performing the action."""
        return self.sender if self.output else self.receiver

    @property
    def channel(self) -> tuple[str, str]:
        return (self.sender, self.receiver)

    def __str__(self) -> str:
        mark = "!" if self.output else "?"
        return f"{self.sender}{self.receiver}{mark}{self.message}"


def subject(label: Label) -> str:
    return label.subject


Word = tuple[Label, ...]


# --------------------------------------------------------------------------- #
# Abstract syntax
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class Empty:
    pass


@dataclass(frozen=True)
class Interaction:
    sender: str
    receiver: str
    message: str

    def __post_init__(self):
        if self.sender == self.receiver:
            raise ChoreographyError(f"self-interaction {self.sender}->{self.receiver}")


@dataclass(frozen=True)
class Seq:
    first: "GChor"
    second: "GChor"


@dataclass(frozen=True)
class Par:
    left: "GChor"
    right: "GChor"


@dataclass(frozen=True)
class Choice:
    left: "GChor"
    right: "GChor"


@dataclass(frozen=True)
class Loop:
    body: "GChor"


GChor = Union[Empty, Interaction, Seq, Par, Choice, Loop]


def subterms(g: GChor) -> Iterator[GChor]:
    yield g
    if isinstance(g, Seq):
        yield from subterms(g.first)
        yield from subterms(g.second)
    elif isinstance(g, (Par, Choice)):
        yield from subterms(g.left)
        yield from subterms(g.right)
    elif isinstance(g, Loop):
        yield from subterms(g.body)


def interactions(g: GChor) -> Iterator[Interaction]:
    for sub in subterms(g):
        if isinstance(sub, Interaction):
            yield sub


def alphabet(g: GChor) -> frozenset[Label]:
    labels = set()
    for i in interactions(g):
        labels.add(Label(i.sender, i.receiver, i.message, True))
        labels.add(Label(i.sender, i.receiver, i.message, False))
    return frozenset(labels)


def participants(g: GChor) -> frozenset[str]:
    return frozenset(p for i in interactions(g) for p in (i.sender, i.receiver))


def is_star_free(g: GChor) -> bool:
    return not any(isinstance(sub, Loop) for sub in subterms(g))


def format_gchor(g: GChor, parent_prec: int = 0) -> str:
    # precedence: 1 choice, 2 par, 3 seq, 4 star
    if isinstance(g, Empty):
        return "0"
    if isinstance(g, Interaction):
        return f"{g.sender}->{g.receiver}:{g.message}"
    if isinstance(g, Loop):
        return f"{format_gchor(g.body, 5)}*"
    if isinstance(g, Seq):
        s, prec = f"{format_gchor(g.first, 4)} ; {format_gchor(g.second, 3)}", 3
    elif isinstance(g, Par):
        s, prec = f"{format_gchor(g.left, 3)} | {format_gchor(g.right, 2)}", 2
    else:
        s, prec = f"{format_gchor(g.left, 2)} + {format_gchor(g.right, 1)}", 1
    return f"({s})" if parent_prec > prec else s


# --------------------------------------------------------------------------- #
# Parser
# --------------------------------------------------------------------------- #

_GC_TOKEN_RE = re.compile(
    r"\s*(?:(?P<ident>[A-Za-z][A-Za-z0-9_]*)|(?P<arrow>->)|(?P<op>[0;|+*():]))"
)


def _gc_tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _GC_TOKEN_RE.match(text, pos)
        if m is None or m.lastgroup is None:
            at = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ChoreographyParseError(f"unexpected character {text[at]!r}", at)
        tokens.append((m.lastgroup, m.group(m.lastgroup), m.start(m.lastgroup)))
        pos = m.end()
    return tokens


class _GcParser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _gc_tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self):
        tok = self.peek()
        if tok is None:
            raise ChoreographyParseError("unexpected end of input", len(self.text))
        self.pos += 1
        return tok

    def expect(self, value: str):
        tok = self.next()
        if tok[1] != value:
            raise ChoreographyParseError(
                f"expected {value!r}, found {tok[1]!r}", tok[2]
            )

    def at(self, value: str) -> bool:
        tok = self.peek()
        return tok is not None and tok[1] == value

    def choice(self) -> GChor:
        left = self.par()
        if self.at("+"):
            self.next()
            return Choice(left, self.choice())
        return left

    def par(self) -> GChor:
        left = self.seq()
        if self.at("|"):
            self.next()
            return Par(left, self.par())
        return left

    def seq(self) -> GChor:
        left = self.star()
        if self.at(";"):
            self.next()
            return Seq(left, self.seq())
        return left

    def star(self) -> GChor:
        g = self.primary()
        while self.at("*"):
            self.next()
            g = Loop(g)
        return g

    def primary(self) -> GChor:
        tok = self.next()
        if tok[1] == "0":
            return Empty()
        if tok[1] == "(":
            inner = self.choice()
            self.expect(")")
            return inner
        if tok[0] == "ident":
            self.expect("->")
            recv = self.next()
            if recv[0] != "ident":
                raise ChoreographyParseError("expected participant", recv[2])
            self.expect(":")
            msg = self.next()
            if msg[0] != "ident":
                raise ChoreographyParseError("expected message type", msg[2])
            if tok[1] == recv[1]:
                raise ChoreographyParseError(
                    f"self-interaction {tok[1]}->{recv[1]}", tok[2]
                )
            return Interaction(tok[1], recv[1], msg[1])
        raise ChoreographyParseError(f"unexpected token {tok[1]!r}", tok[2])


def parse_gchor(text: str) -> GChor:
    parser = _GcParser(text)
    g = parser.choice()
    tok = parser.peek()
    if tok is not None:
        raise ChoreographyParseError(f"trailing input {tok[1]!r}", tok[2])
    return g


# --------------------------------------------------------------------------- #
# Pomset unfolding
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class Pomset:
    """Events 0..n-1 labelled by ``labels``; ``order`` is strict and transitive."""

    labels: tuple[Label, ...]
    order: frozenset[tuple[int, int]]

    def __post_init__(self):
        for (i, j) in self.order:
            if i == j:
                raise ChoreographyError("order must be irreflexive")

    def __len__(self) -> int:
        return len(self.labels)


EMPTY_POMSET = Pomset((), frozenset())


def _closure(n: int, pairs: set[tuple[int, int]]) -> frozenset[tuple[int, int]]:
    succ = {i: set() for i in range(n)}
    for i, j in pairs:
        succ[i].add(j)
    closed = {}
    for i in range(n):
        seen: set[int] = set()
        stack = list(succ[i])
        while stack:
            j = stack.pop()
            if j in seen:
                continue
            seen.add(j)
            stack.extend(succ[j])
        closed[i] = seen
    return frozenset((i, j) for i in range(n) for j in closed[i])


def weak_seq(p: Pomset, q: Pomset) -> Pomset:
    """Disjoint union ordering each left event before same-subject right events."""
    n = len(p)
    labels = p.labels + q.labels
    pairs = set(p.order)
    pairs.update((i + n, j + n) for (i, j) in q.order)
    for i, li in enumerate(p.labels):
        for j, lj in enumerate(q.labels):
            if li.subject == lj.subject:
                pairs.add((i, j + n))
    return Pomset(labels, _closure(len(labels), pairs))


def parallel(p: Pomset, q: Pomset) -> Pomset:
    n = len(p)
    labels = p.labels + q.labels
    pairs = set(p.order) | {(i + n, j + n) for (i, j) in q.order}
    return Pomset(labels, frozenset(pairs))


def pomsets(g: GChor, unfold_bound: int) -> frozenset[Pomset]:
    """All pomsets denoted by ``g`` with loops unfolded up to ``unfold_bound`` times."""
    if unfold_bound < 0:
        raise ChoreographyError("unfold_bound must be nonnegative")
    if isinstance(g, Empty):
        return frozenset({EMPTY_POMSET})
    if isinstance(g, Interaction):
        out = Label(g.sender, g.receiver, g.message, True)
        inp = Label(g.sender, g.receiver, g.message, False)
        return frozenset({Pomset((out, inp), frozenset({(0, 1)}))})
    if isinstance(g, Seq):
        return frozenset(
            weak_seq(p, q)
            for p in pomsets(g.first, unfold_bound)
            for q in pomsets(g.second, unfold_bound)
        )
    if isinstance(g, Par):
        return frozenset(
            parallel(p, q)
            for p in pomsets(g.left, unfold_bound)
            for q in pomsets(g.right, unfold_bound)
        )
    if isinstance(g, Choice):
        return pomsets(g.left, unfold_bound) | pomsets(g.right, unfold_bound)
    if isinstance(g, Loop):
        body = pomsets(g.body, unfold_bound)
        result = {EMPTY_POMSET}
        layer = {EMPTY_POMSET}
        for _ in range(unfold_bound):
            layer = {weak_seq(p, q) for p in layer for q in body}
            result |= layer
        return frozenset(result)
    raise ChoreographyError(f"not a g-choreography: {g!r}")


@lru_cache(maxsize=4096)
def _index(p: Pomset):
    preds: list[set[int]] = [set() for _ in range(len(p))]
    succs: list[set[int]] = [set() for _ in range(len(p))]
    for (i, j) in p.order:
        preds[j].add(i)
        succs[i].add(j)
    by_label: dict[Label, list[int]] = {}
    for e, label in enumerate(p.labels):
        by_label.setdefault(label, []).append(e)
    return (
        tuple(frozenset(s) for s in preds),
        tuple(frozenset(s) for s in succs),
        {label: tuple(events) for label, events in by_label.items()},
    )


def _embeds_prefix(p: Pomset, word: Word) -> bool:
    """Is ``word`` a linearization of a downward-closed subset of ``p``?

    Backtracking scan: each position consumes an unconsumed event with a
    matching label whose predecessors are all consumed.
    """
    if len(word) > len(p):
        return False
    preds, succs, by_label = _index(p)
    consumed: set[int] = set()

    def go(pos: int) -> bool:
        if pos == len(word):
            return True
        tried: set[tuple] = set()
        for e in by_label.get(word[pos], ()):
            if e in consumed or not preds[e] <= consumed:
                continue
            # swapping equal-label events with the same predecessors and
            # successors is an automorphism, so trying one suffices
            sig = (preds[e], succs[e])
            if sig in tried:
                continue
            tried.add(sig)
            consumed.add(e)
            if go(pos + 1):
                return True
            consumed.discard(e)
        return False

    return go(0)


def unfold_bound_for(word: Word, g: GChor) -> int:
    """Loop unfoldings sufficient to recognize ``word``: one per consumed label, plus one."""
    return len(word) + 1


def is_prefix_word(g: GChor, word: Word) -> bool:
    """Membership in the prefix-closed language of ``g``."""
    candidates = sorted(
        pomsets(g, unfold_bound_for(word, g)), key=len, reverse=True
    )
    return any(_embeds_prefix(p, word) for p in candidates)


def is_maximal_word(g: GChor, word: Word) -> bool:
    """Membership among the non-extendable words of ``g``'s language."""
    if not is_prefix_word(g, word):
        return False
    return not any(
        is_prefix_word(g, word + (label,))
        for label in sorted(alphabet(g), key=str)
    )


class WordMembership:
    """Caching front end for repeated membership queries against fixed terms.

    Unfolding a loop further than a word requires never changes membership,
    so pomsets are cached at the largest bound requested so far (rounded up
    to limit recomputation as words grow).
    """

    def __init__(self):
        self._prefix: dict[tuple[GChor, Word], bool] = {}
        self._maximal: dict[tuple[GChor, Word], bool] = {}
        self._pomsets: dict[GChor, tuple[int, list[Pomset]]] = {}

    def _unfolded(self, g: GChor, bound: int) -> list[Pomset]:
        cached = self._pomsets.get(g)
        if cached is not None and cached[0] >= bound:
            return cached[1]
        bound = (bound + 7) // 8 * 8
        ps = sorted(pomsets(g, bound), key=len, reverse=True)
        self._pomsets[g] = (bound, ps)
        return ps

    def is_prefix(self, g: GChor, word: Word) -> bool:
        key = (g, word)
        if key not in self._prefix:
            candidates = self._unfolded(g, unfold_bound_for(word, g))
            self._prefix[key] = any(_embeds_prefix(p, word) for p in candidates)
        return self._prefix[key]

    def is_maximal(self, g: GChor, word: Word) -> bool:
        key = (g, word)
        if key not in self._maximal:
            if not self.is_prefix(g, word):
                self._maximal[key] = False
            else:
                self._maximal[key] = not any(
                    self.is_prefix(g, word + (label,))
                    for label in sorted(alphabet(g), key=str)
                )
        return self._maximal[key]
