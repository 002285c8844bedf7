"""Partial-order helpers shared by the optimizer's candidate DAG and the
serving layer's collection diagram."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .filters import FilterExpr


def subsumption_relation(
    filters: Sequence[FilterExpr],
    cards: Sequence[int],
    check: Callable[[FilterExpr, FilterExpr], bool],
) -> np.ndarray:
    """Pairwise relation matrix: rel[i, j] iff filter i subsumes filter j.

    ``cards`` prunes impossible pairs up front (a subsumer can never have
    smaller cardinality than what it subsumes). Diagonal is False.
    """
    n = len(filters)
    rel = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(n):
            if i == j or cards[i] < cards[j]:
                continue
            if check(filters[i], filters[j]):
                rel[i, j] = True
    return rel


def transitive_reduction(rel: np.ndarray) -> np.ndarray:
    """Drop every edge implied by a two-step path (Hasse form for a strict
    partial order). Input diagonal must be False."""
    n = rel.shape[0]
    if n == 0:
        return rel.copy()
    r = rel.astype(np.float32)
    implied = (r @ r) > 0.5
    return rel & ~implied


def children_lists(direct: np.ndarray) -> list[list[int]]:
    return [list(np.nonzero(direct[i])[0]) for i in range(direct.shape[0])]
