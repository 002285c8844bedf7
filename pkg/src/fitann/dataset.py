"""Attributed vector datasets: vectors plus per-row attribute sets.

Attributes live in two disjoint namespaces: string tokens (set membership)
and named numeric values (range predicates). Datasets are immutable after
construction; per-token and per-numeric column caches are built lazily to
make repeated predicate evaluation cheap.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

METRICS = ("l2", "ip")


@dataclass(frozen=True)
class AttributeSet:
    """One row's attributes: a token set and named numeric values."""

    tokens: frozenset[str] = frozenset()
    numerics: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", frozenset(self.tokens))
        object.__setattr__(
            self, "numerics", {str(k): float(v) for k, v in dict(self.numerics).items()}
        )


@dataclass
class AttributedDataset:
    """N vectors of dimension d with one :class:`AttributeSet` per row.

    ``metric`` is ``"l2"`` (squared euclidean) or ``"ip"`` (negative inner
    product); distances are always "smaller is closer".
    """

    vectors: np.ndarray
    attributes: list[AttributeSet]
    metric: str = "l2"

    def __post_init__(self) -> None:
        vecs = np.ascontiguousarray(np.asarray(self.vectors, dtype=np.float32))
        if vecs.ndim != 2 or vecs.shape[1] < 1:
            raise ValueError("vectors must be a 2-D matrix with d >= 1")
        if len(self.attributes) != vecs.shape[0]:
            raise ValueError(
                f"attribute count {len(self.attributes)} != vector count {vecs.shape[0]}"
            )
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}; expected one of {METRICS}")
        self.vectors = vecs
        self._token_rows: dict[str, np.ndarray] | None = None
        self._numeric_cols: dict[str, np.ndarray] | None = None

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def token_mask(self, token: str) -> np.ndarray:
        """Boolean row mask for one token; cached inverted index."""
        if self._token_rows is None:
            index: dict[str, list[int]] = {}
            for i, a in enumerate(self.attributes):
                for t in a.tokens:
                    index.setdefault(t, []).append(i)
            self._token_rows = {
                t: np.asarray(rows, dtype=np.int64) for t, rows in index.items()
            }
        mask = np.zeros(self.n, dtype=bool)
        rows = self._token_rows.get(token)
        if rows is not None:
            mask[rows] = True
        return mask

    def numeric_column(self, name: str) -> np.ndarray:
        """Numeric attribute as a float column; NaN where the row lacks it."""
        if self._numeric_cols is None:
            self._numeric_cols = {}
        col = self._numeric_cols.get(name)
        if col is None:
            col = np.full(self.n, np.nan, dtype=np.float64)
            for i, a in enumerate(self.attributes):
                v = a.numerics.get(name)
                if v is not None:
                    col[i] = v
            self._numeric_cols[name] = col
        return col

    def distances(self, q: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        """Distances from query ``q`` to ``rows`` (all rows if None)."""
        x = self.vectors if rows is None else self.vectors[rows]
        q = np.asarray(q, dtype=np.float32)
        if self.metric == "l2":
            diff = x.astype(np.float64) - q.astype(np.float64)
            return np.einsum("ij,ij->i", diff, diff)
        return -(x.astype(np.float64) @ q.astype(np.float64))


def attribute_sets(token_rows: Iterable[Iterable[str]]) -> list[AttributeSet]:
    """Convenience: build token-only attribute sets from iterables."""
    return [AttributeSet(tokens=frozenset(r)) for r in token_rows]
