"""Synthetic attribute and workload generators.

The per-rank recipe gives each row the i-th of ``attr_count`` tokens
independently with probability 1/i; the gaussian recipe draws named numeric
attributes from normal distributions. Workload templates are drawn from a
zipf distribution over a template pool; the exact pool construction is a
parameterized stand-in for the generation recipes of prior workload-aware
indexing work, so every knob is exposed.
"""
from __future__ import annotations

import numpy as np

from .dataset import AttributedDataset, AttributeSet
from .filters import TRUE, AttrContains, FilterExpr, Range, and_, or_, to_text

DEFAULT_NUMERIC_SPECS = (("x", 0.0, 1.0), ("y", 0.0, 1.0))


def gen_attributes(n: int, recipe: str, seed: int, attr_count: int = 20,
                   numeric_specs=DEFAULT_NUMERIC_SPECS) -> list[AttributeSet]:
    """Attribute sets for ``n`` rows under ``recipe``:

    - ``none``: empty attribute sets;
    - ``per-rank-probability``: token ``a<i>`` with probability 1/i;
    - ``gaussian-numeric``: numeric attributes per ``numeric_specs``
      (name, mean, std) triples.
    """
    rng = np.random.default_rng(seed)
    if recipe == "none":
        return [AttributeSet() for _ in range(n)]
    if recipe == "per-rank-probability":
        hits = rng.random((n, attr_count)) < (1.0 / np.arange(1, attr_count + 1))
        names = [f"a{i}" for i in range(1, attr_count + 1)]
        return [
            AttributeSet(tokens=frozenset(
                names[j] for j in np.nonzero(hits[i])[0]))
            for i in range(n)
        ]
    if recipe == "gaussian-numeric":
        cols = {name: rng.normal(mu, sd, n) for name, mu, sd in numeric_specs}
        return [
            AttributeSet(numerics={name: float(col[i]) for name, col in cols.items()})
            for i in range(n)
        ]
    raise ValueError(f"unknown attribute recipe {recipe!r}")


def _zipf_weights(n_templates: int, s: float) -> np.ndarray:
    ranks = np.arange(1, n_templates + 1, dtype=np.float64)
    w = ranks ** -s
    return w / w.sum()


def _token_pool(ds: AttributedDataset) -> list[str]:
    tokens: set[str] = set()
    for a in ds.attributes:
        tokens.update(a.tokens)
    return sorted(tokens)


def _numeric_pool(ds: AttributedDataset) -> list[str]:
    names: set[str] = set()
    for a in ds.attributes:
        names.update(a.numerics)
    return sorted(names)


def gen_workload(recipe: str, size: int, seed: int, ds: AttributedDataset,
                 zipf_s: float = 1.0, pool_size: int = 100,
                 arity: tuple[int, int] = (1, 2),
                 unfiltered_fraction: float = 0.2,
                 query_noise: float = 0.1):
    """Sample ``size`` (query vector, filter) pairs.

    Recipes: ``zipf-conjunctive``, ``zipf-disjunctive`` (token templates of
    the given arity range), ``zipf-range`` (windows over numeric
    attributes), and ``uniform-single-attr`` (single-token filters with an
    unfiltered fraction). Query vectors are dataset rows perturbed with
    gaussian noise. zipf exponent 0 degenerates to uniform templates.
    """
    rng = np.random.default_rng(seed)
    queries = _sample_queries(ds, size, rng, query_noise)

    if recipe == "uniform-single-attr":
        tokens = _token_pool(ds)
        if not tokens:
            raise ValueError("dataset has no tokens to filter on")
        filters: list[FilterExpr] = []
        for _ in range(size):
            if rng.random() < unfiltered_fraction:
                filters.append(TRUE)
            else:
                filters.append(AttrContains(tokens[rng.integers(len(tokens))]))
        return queries, filters

    if recipe in ("zipf-conjunctive", "zipf-disjunctive"):
        tokens = _token_pool(ds)
        if not tokens:
            raise ValueError("dataset has no tokens to filter on")
        templates: list[FilterExpr] = []
        seen: set[str] = set()
        lo, hi = arity
        attempts = 0
        while len(templates) < pool_size and attempts < pool_size * 50:
            attempts += 1
            a = int(rng.integers(lo, hi + 1))
            picks = rng.choice(len(tokens), size=min(a, len(tokens)), replace=False)
            atoms = [AttrContains(tokens[i]) for i in sorted(picks)]
            f = and_(*atoms) if recipe == "zipf-conjunctive" else or_(*atoms)
            key = to_text(f)
            if key not in seen:
                seen.add(key)
                templates.append(f)
        weights = _zipf_weights(len(templates), zipf_s)
        idx = rng.choice(len(templates), size=size, p=weights)
        return queries, [templates[i] for i in idx]

    if recipe == "zipf-range":
        names = _numeric_pool(ds)
        if not names:
            raise ValueError("dataset has no numeric attributes to filter on")
        templates = []
        for _ in range(pool_size):
            name = names[rng.integers(len(names))]
            col = ds.numeric_column(name)
            vals = col[~np.isnan(col)]
            lo_q, hi_q = sorted(rng.random(2))
            lo_v = float(np.quantile(vals, lo_q))
            hi_v = float(np.quantile(vals, hi_q))
            templates.append(Range(name, lo_v, hi_v))
        weights = _zipf_weights(len(templates), zipf_s)
        idx = rng.choice(len(templates), size=size, p=weights)
        return queries, [templates[i] for i in idx]

    raise ValueError(f"unknown workload recipe {recipe!r}")


def _sample_queries(ds: AttributedDataset, size: int, rng,
                    noise: float) -> np.ndarray:
    rows = rng.integers(0, ds.n, size)
    base = ds.vectors[rows].astype(np.float64)
    scale = float(ds.vectors.std()) if ds.n > 1 else 1.0
    q = base + rng.normal(0.0, noise * max(scale, 1e-9), base.shape)
    return q.astype(np.float32)


def gen_gaussian_vectors(n: int, d: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n, d)).astype(np.float32)
