"""Shared generators for property/fuzz tests."""
from __future__ import annotations

import numpy as np

from fitann import (AttrContains, AttributedDataset, AttributeSet, Range,
                    TRUE, and_, or_)

TOKENS = ["A", "B", "C", "D", "E", "F", "G", "H"]
NUMERICS = ["x", "y"]


def random_filter(rng: np.random.Generator, depth: int = 2, allow_true: bool = True):
    """Random canonical filter over the shared token/numeric vocabulary."""
    kinds = ["atom", "range"]
    if depth > 0:
        kinds += ["and", "or"]
    if allow_true:
        kinds += ["true"]
    kind = kinds[rng.integers(len(kinds))]
    if kind == "true":
        return TRUE
    if kind == "atom":
        return AttrContains(TOKENS[rng.integers(len(TOKENS))])
    if kind == "range":
        name = NUMERICS[rng.integers(len(NUMERICS))]
        lo, hi = np.sort(rng.integers(0, 10, size=2).astype(float))
        if rng.random() < 0.15:
            return Range(name, None, float(hi))
        if rng.random() < 0.15:
            return Range(name, float(lo), None)
        return Range(name, float(lo), float(hi))
    children = [
        random_filter(rng, depth - 1, allow_true=False)
        for _ in range(int(rng.integers(1, 4)))
    ]
    return and_(*children) if kind == "and" else or_(*children)


def random_attribute_set(rng: np.random.Generator) -> AttributeSet:
    tokens = {t for t in TOKENS if rng.random() < 0.3}
    numerics = {n: float(rng.integers(0, 10)) for n in NUMERICS if rng.random() < 0.6}
    return AttributeSet(tokens=frozenset(tokens), numerics=numerics)


def random_dataset(rng: np.random.Generator, n: int = 16, d: int = 4,
                   metric: str = "l2") -> AttributedDataset:
    return AttributedDataset(
        vectors=rng.standard_normal((n, d)).astype(np.float32),
        attributes=[random_attribute_set(rng) for _ in range(n)],
        metric=metric,
    )
