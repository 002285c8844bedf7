"""Bitmaps of predicate-passing rows, filter cardinalities, and bitmap
subsumption checks.

Filters are evaluated against a dataset once into a :class:`Bitmap`; the
serving layer shares that bitmap between planning and execution.
"""
from __future__ import annotations

import numpy as np

from .dataset import AttributedDataset
from .filters import And, AttrContains, FilterExpr, Or, Range, TrueFilter


class Bitmap:
    """Fixed-length bit sequence over dataset rows with a cached popcount."""

    __slots__ = ("bits", "_count")

    def __init__(self, bits: np.ndarray):
        bits = np.asarray(bits, dtype=bool)
        if bits.ndim != 1:
            raise ValueError("bitmap must be one-dimensional")
        self.bits = bits
        self._count: int | None = None

    @classmethod
    def zeros(cls, n: int) -> "Bitmap":
        return cls(np.zeros(n, dtype=bool))

    @classmethod
    def ones(cls, n: int) -> "Bitmap":
        return cls(np.ones(n, dtype=bool))

    @classmethod
    def from_indices(cls, n: int, indices) -> "Bitmap":
        bits = np.zeros(n, dtype=bool)
        bits[np.asarray(indices, dtype=np.int64)] = True
        return cls(bits)

    def __len__(self) -> int:
        return self.bits.shape[0]

    @property
    def count(self) -> int:
        if self._count is None:
            self._count = int(self.bits.sum())
        return self._count

    def nonzero(self) -> np.ndarray:
        return np.nonzero(self.bits)[0]

    def get(self, i: int) -> bool:
        return bool(self.bits[i])

    def _check(self, other: "Bitmap") -> None:
        if len(self) != len(other):
            raise ValueError(
                f"bitmap length mismatch: {len(self)} vs {len(other)}; "
                "bitmaps must come from the same dataset"
            )

    def __and__(self, other: "Bitmap") -> "Bitmap":
        self._check(other)
        return Bitmap(self.bits & other.bits)

    def __or__(self, other: "Bitmap") -> "Bitmap":
        self._check(other)
        return Bitmap(self.bits | other.bits)

    def __invert__(self) -> "Bitmap":
        return Bitmap(~self.bits)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Bitmap):
            return NotImplemented
        return len(self) == len(other) and bool(np.array_equal(self.bits, other.bits))

    def __repr__(self) -> str:
        return f"Bitmap(n={len(self)}, count={self.count})"


def bitmap(f: FilterExpr, ds: AttributedDataset) -> Bitmap:
    """Bit i set iff row i's attributes satisfy ``f``."""
    return Bitmap(_mask(f, ds))


def _mask(f: FilterExpr, ds: AttributedDataset) -> np.ndarray:
    if isinstance(f, TrueFilter):
        return np.ones(ds.n, dtype=bool)
    if isinstance(f, AttrContains):
        return ds.token_mask(f.token)
    if isinstance(f, Range):
        col = ds.numeric_column(f.attr)
        m = ~np.isnan(col)
        if f.lo is not None:
            m &= col >= f.lo
        if f.hi is not None:
            m &= col <= f.hi
        return m
    if isinstance(f, And):
        m = _mask(f.children[0], ds)
        for c in f.children[1:]:
            m = m & _mask(c, ds)
        return m
    if isinstance(f, Or):
        m = _mask(f.children[0], ds)
        for c in f.children[1:]:
            m = m | _mask(c, ds)
        return m
    raise TypeError(f"not a FilterExpr: {f!r}")


def cardinality(f: FilterExpr, ds: AttributedDataset) -> int:
    """Number of rows satisfying ``f``; popcount of :func:`bitmap`."""
    return bitmap(f, ds).count


def subsumes_bitmap(outer: Bitmap, inner: Bitmap) -> bool:
    """True iff every set bit of ``inner`` is set in ``outer``."""
    if len(outer) != len(inner):
        raise ValueError(
            f"bitmap length mismatch: outer {len(outer)} vs inner {len(inner)}"
        )
    return not bool(np.any(inner.bits & ~outer.bits))
