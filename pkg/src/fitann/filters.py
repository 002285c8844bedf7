"""Filter algebra: predicate ASTs, canonicalization, a text grammar, and
sound structural subsumption.

Grammar (used by workload files and the CLI)::

    *                 always-true filter
    A                 token membership
    x:[1,5]           closed numeric range; x:[,5] / x:[1,] for open ends
    A&B               conjunction ('&' binds tighter than '|')
    A|B|C             disjunction
    (A|B)&y:[0,3]     grouping

Canonical form: children of And/Or are themselves canonical, deduplicated,
and sorted by their serialized text; single-child nodes collapse to the
child; nested nodes of the same kind are flattened. Structurally equal
filters therefore compare (and hash) equal, and their text forms coincide.

Negation is deliberately absent; see the package docs for the extension
point.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable

from .dataset import AttributeSet


class FilterExpr:
    """Base class for filter AST nodes. Instances are immutable."""

    __slots__ = ()


@dataclass(frozen=True)
class TrueFilter(FilterExpr):
    """The dummy filter that every row satisfies."""

    __slots__ = ()


@dataclass(frozen=True)
class AttrContains(FilterExpr):
    """Passes rows whose token set contains ``token``."""

    token: str

    def __post_init__(self) -> None:
        if not _TOKEN_RE.fullmatch(self.token):
            raise ValueError(f"invalid token {self.token!r}")


@dataclass(frozen=True)
class Range(FilterExpr):
    """Closed interval test on a numeric attribute; None = unbounded end.

    A row without the attribute never passes.
    """

    attr: str
    lo: float | None
    hi: float | None

    def __post_init__(self) -> None:
        if not _TOKEN_RE.fullmatch(self.attr):
            raise ValueError(f"invalid attribute name {self.attr!r}")
        if self.lo is not None:
            object.__setattr__(self, "lo", float(self.lo))
        if self.hi is not None:
            object.__setattr__(self, "hi", float(self.hi))
        if self.lo is not None and self.hi is not None and self.lo > self.hi:
            raise ValueError(f"range lo {self.lo} > hi {self.hi}")


@dataclass(frozen=True)
class And(FilterExpr):
    children: tuple[FilterExpr, ...]

    def __post_init__(self) -> None:
        if not self.children:
            raise ValueError("And requires at least one child")


@dataclass(frozen=True)
class Or(FilterExpr):
    children: tuple[FilterExpr, ...]

    def __post_init__(self) -> None:
        if not self.children:
            raise ValueError("Or requires at least one child")


TRUE = TrueFilter()

_TOKEN_RE = re.compile(r"[A-Za-z0-9_.\-]+")


def and_(*children: FilterExpr) -> FilterExpr:
    """Canonical conjunction of ``children``."""
    return canonicalize(And(tuple(children)))


def or_(*children: FilterExpr) -> FilterExpr:
    """Canonical disjunction of ``children``."""
    return canonicalize(Or(tuple(children)))


def canonicalize(f: FilterExpr) -> FilterExpr:
    """Return the canonical form of ``f`` (idempotent)."""
    if isinstance(f, (TrueFilter, AttrContains, Range)):
        return f
    if isinstance(f, (And, Or)):
        kind = type(f)
        flat: list[FilterExpr] = []
        for c in f.children:
            c = canonicalize(c)
            if isinstance(c, kind):
                flat.extend(c.children)  # type: ignore[attr-defined]
            else:
                flat.append(c)
        seen: dict[str, FilterExpr] = {}
        for c in flat:
            seen.setdefault(to_text(c), c)
        ordered = tuple(seen[k] for k in sorted(seen))
        if len(ordered) == 1:
            return ordered[0]
        return kind(ordered)
    raise TypeError(f"not a FilterExpr: {f!r}")


def _fmt_num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def to_text(f: FilterExpr) -> str:
    """Serialize to the compact grammar. Canonical filters serialize
    deterministically, so this doubles as the canonical sort key."""
    if isinstance(f, TrueFilter):
        return "*"
    if isinstance(f, AttrContains):
        return f.token
    if isinstance(f, Range):
        lo = "" if f.lo is None else _fmt_num(f.lo)
        hi = "" if f.hi is None else _fmt_num(f.hi)
        return f"{f.attr}:[{lo},{hi}]"
    if isinstance(f, And):
        parts = [
            f"({to_text(c)})" if isinstance(c, Or) else to_text(c) for c in f.children
        ]
        return "&".join(parts)
    if isinstance(f, Or):
        return "|".join(to_text(c) for c in f.children)
    raise TypeError(f"not a FilterExpr: {f!r}")


def canonical_key(f: FilterExpr) -> str:
    """Text of the canonical form; the tie-break key used across the engine."""
    return to_text(canonicalize(f))


class FilterParseError(ValueError):
    pass


_LEX = re.compile(
    r"\s*(?:(?P<lpar>\()|(?P<rpar>\))|(?P<and>&)|(?P<or>\|)|(?P<star>\*)"
    r"|(?P<range>[A-Za-z0-9_.\-]+:\[[^\]]*\])|(?P<token>[A-Za-z0-9_.\-]+))"
)

_RANGE_RE = re.compile(
    r"(?P<attr>[A-Za-z0-9_.\-]+):\[(?P<lo>[^,\]]*),(?P<hi>[^,\]]*)\]"
)


def _tokenize(text: str) -> list[tuple[str, str]]:
    out: list[tuple[str, str]] = []
    pos = 0
    while pos < len(text):
        m = _LEX.match(text, pos)
        if m is None or m.end() == pos:
            raise FilterParseError(f"bad filter syntax at {text[pos:]!r}")
        pos = m.end()
        kind = m.lastgroup
        assert kind is not None
        out.append((kind, m.group(kind)))
    return out


def parse(text: str) -> FilterExpr:
    """Parse the compact grammar into a canonical :class:`FilterExpr`."""
    toks = _tokenize(text)
    if not toks:
        raise FilterParseError("empty filter")
    pos = 0

    def peek() -> str | None:
        return toks[pos][0] if pos < len(toks) else None

    def expr() -> FilterExpr:
        nonlocal pos
        terms = [term()]
        while peek() == "or":
            pos += 1
            terms.append(term())
        return or_(*terms) if len(terms) > 1 else terms[0]

    def term() -> FilterExpr:
        nonlocal pos
        factors = [factor()]
        while peek() == "and":
            pos += 1
            factors.append(factor())
        return and_(*factors) if len(factors) > 1 else factors[0]

    def factor() -> FilterExpr:
        nonlocal pos
        if pos >= len(toks):
            raise FilterParseError("unexpected end of filter")
        kind, val = toks[pos]
        if kind == "lpar":
            pos += 1
            inner = expr()
            if peek() != "rpar":
                raise FilterParseError("unbalanced parenthesis")
            pos += 1
            return inner
        if kind == "star":
            pos += 1
            return TRUE
        if kind == "range":
            pos += 1
            m = _RANGE_RE.fullmatch(val)
            assert m is not None
            lo = float(m.group("lo")) if m.group("lo").strip() else None
            hi = float(m.group("hi")) if m.group("hi").strip() else None
            return Range(m.group("attr"), lo, hi)
        if kind == "token":
            pos += 1
            return AttrContains(val)
        raise FilterParseError(f"unexpected {val!r}")

    result = expr()
    if pos != len(toks):
        raise FilterParseError(f"trailing input after filter: {toks[pos][1]!r}")
    return canonicalize(result)


def evaluate(f: FilterExpr, a: AttributeSet) -> bool:
    """True iff attribute set ``a`` satisfies ``f``. Total: never raises
    for well-formed filters; missing numeric attributes evaluate to False."""
    if isinstance(f, TrueFilter):
        return True
    if isinstance(f, AttrContains):
        return f.token in a.tokens
    if isinstance(f, Range):
        v = a.numerics.get(f.attr)
        if v is None:
            return False
        if f.lo is not None and v < f.lo:
            return False
        if f.hi is not None and v > f.hi:
            return False
        return True
    if isinstance(f, And):
        return all(evaluate(c, a) for c in f.children)
    if isinstance(f, Or):
        return any(evaluate(c, a) for c in f.children)
    raise TypeError(f"not a FilterExpr: {f!r}")


def subsumes_logical(outer: FilterExpr, inner: FilterExpr) -> bool:
    """Sound, structurally-incomplete subsumption: True only if every
    attribute set satisfying ``inner`` also satisfies ``outer``.

    Rules, tried in order (first hit wins):

    * the true filter subsumes everything; a filter subsumes itself;
    * an Or inner is subsumed iff every branch is (exact);
    * an And outer subsumes iff every member does (exact);
    * an And inner is subsumed if some member is;
    * an Or outer subsumes if some member does;
    * ranges on the same attribute: interval containment.

    Conjunction-superset and disjunction-subset fall out of the recursion.
    """
    return _subsumes(canonicalize(outer), canonicalize(inner))


def _subsumes(out: FilterExpr, inn: FilterExpr) -> bool:
    if isinstance(out, TrueFilter):
        return True
    if out == inn:
        return True
    if isinstance(inn, Or) and all(_subsumes(out, g) for g in inn.children):
        return True
    if isinstance(out, And) and all(_subsumes(m, inn) for m in out.children):
        return True
    if isinstance(inn, And) and any(_subsumes(out, g) for g in inn.children):
        return True
    if isinstance(out, Or) and any(_subsumes(m, inn) for m in out.children):
        return True
    if isinstance(out, Range) and isinstance(inn, Range) and out.attr == inn.attr:
        lo_ok = out.lo is None or (inn.lo is not None and out.lo <= inn.lo)
        hi_ok = out.hi is None or (inn.hi is not None and out.hi >= inn.hi)
        return lo_ok and hi_ok
    return False


def unique_tokens(filters: Iterable[FilterExpr]) -> set[str]:
    """All membership tokens mentioned by ``filters``."""
    out: set[str] = set()

    def walk(f: FilterExpr) -> None:
        if isinstance(f, AttrContains):
            out.add(f.token)
        elif isinstance(f, (And, Or)):
            for c in f.children:
                walk(c)

    for f in filters:
        walk(f)
    return out
