"""Analytical size/speed/recall model.

Pure functions relating a subindex's cardinality to the graph degree and
exploration factor it needs to match the base index's recall, plus the
serving-cost formulas the optimizer and planner minimize over. Natural
logarithms throughout; the downscaling ratios are log-base independent.

Cost units are abstract: only ratios and minima matter. ``gamma`` is the
single constant bridging brute-force scan units to indexed-search units.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple

from .filters import FilterExpr


@dataclass(frozen=True)
class CostParams:
    """Engine-wide model parameters.

    gamma defaults to :func:`calibrate_gamma` of ``k``; budget_b is in model
    size units (graph degree times indexed rows) and must cover the base
    index, which is validated where the dataset size is known.
    """

    m_inf: int = 32
    sef_inf: int = 50
    k: int = 10
    gamma: float | None = None
    cor: float = 0.5
    budget_b: float = math.inf
    efc: int = 40

    def __post_init__(self) -> None:
        if self.m_inf < 2:
            raise ValueError("m_inf must be >= 2")
        if not (self.sef_inf >= self.k >= 1):
            raise ValueError("need sef_inf >= k >= 1")
        if self.gamma is None:
            object.__setattr__(self, "gamma", calibrate_gamma(self.k))
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.cor <= 0:
            raise ValueError("cor must be positive")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def m_downscale(card_h: int, n: int, m_inf: int) -> int:
    """Graph degree for a subindex of ``card_h`` rows matching the recall of
    an ``m_inf`` base index over ``n`` rows: m_inf * log(card_h)/log(n),
    rounded to nearest and clamped to [2, m_inf]."""
    if card_h < 1:
        raise ValueError("cannot downscale an empty subindex")
    if n < 2 or card_h > n:
        raise ValueError(f"need 1 <= card_h <= n and n >= 2, got {card_h}, {n}")
    raw = m_inf * math.log(card_h) / math.log(n)
    return max(2, min(int(m_inf), _round_half_up(raw)))


def sef_downscale(card_h: int, n: int, sef_inf: int, k: int) -> int:
    """Exploration factor for a subindex matching the recall of the base
    index searched at ``sef_inf``: max(k, sef_inf * log(card_h)/log(n))."""
    if card_h < 1:
        raise ValueError("cannot downscale an empty subindex")
    if n < 2 or card_h > n:
        raise ValueError(f"need 1 <= card_h <= n and n >= 2, got {card_h}, {n}")
    if sef_inf < k:
        raise ValueError("sef_inf must be >= k")
    raw = sef_inf * math.log(card_h) / math.log(n)
    return max(int(k), _round_half_up(raw))


def index_model_size(card_h: int, m: int) -> int:
    """Model memory units of a subindex: degree times indexed rows."""
    return int(m) * int(card_h)


def indexed_cost(card_h: int, card_f: int, sef: float, cor: float) -> float:
    """Expected result-set-filtered search cost of serving a filter of
    cardinality ``card_f`` from a subindex of cardinality ``card_h``:
    log(card_h) * sef * (card_h/card_f)**cor.

    Callers must only pass subsuming subindexes (card_h >= card_f); a
    non-subsuming subindex has infinite cost by definition.
    """
    if card_f < 1:
        raise ValueError("card_f must be >= 1")
    if card_h < card_f:
        raise ValueError(
            f"card_h {card_h} < card_f {card_f}: subindex does not cover the filter"
        )
    return math.log(card_h) * sef * (card_h / card_f) ** cor


def brute_cost(card_f: int, gamma: float) -> float:
    """Aligned brute-force scan cost: gamma * card_f."""
    if card_f < 0:
        raise ValueError("card_f must be >= 0")
    return gamma * card_f


def calibrate_gamma(k: int) -> float:
    """Default gamma: brute force and perfect-selectivity indexed search
    (at sef=k) cost the same for a 1000-cardinality filter, i.e.
    gamma*1000 == k*log(1000)."""
    return k * math.log(1000.0) / 1000.0


class QueryCost(NamedTuple):
    cost: float
    strategy: str  # "brute" or "indexed"
    via: FilterExpr | None  # subsuming subindex filter when indexed


def query_cost(
    collection: Iterable[tuple[FilterExpr, int]],
    f: FilterExpr,
    card_f: int,
    params: CostParams,
    subsumes: Callable[[FilterExpr, FilterExpr], bool],
) -> QueryCost:
    """Cost of the best serving strategy for ``f`` given a collection of
    (subindex filter, cardinality) entries that includes the base index.

    Construction-time evaluation: all subindexes are costed at sef = k. The
    serving layer substitutes downscaled sef values instead.
    """
    if card_f == 0:
        return QueryCost(0.0, "brute", None)
    best = QueryCost(brute_cost(card_f, params.gamma), "brute", None)
    for h, card_h in collection:
        if card_h < card_f or not subsumes(h, f):
            continue
        c = indexed_cost(card_h, card_f, params.k, params.cor)
        if c < best.cost:
            best = QueryCost(c, "indexed", h)
    return best
