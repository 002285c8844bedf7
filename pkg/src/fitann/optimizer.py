"""Workload-driven subindex selection under a memory budget.

Builds the candidate DAG from the observed filter tally, prices every
candidate with the cost model, and picks a collection greedily by unit
marginal benefit (benefit per model-size unit) with lazy revalidation.
Because collection serving cost has diminishing returns, a popped
candidate whose refreshed ratio still tops the heap is exactly the
candidate a full recomputation would pick.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .bitmaps import bitmap, subsumes_bitmap
from .costmodel import CostParams, brute_cost, index_model_size, indexed_cost, m_downscale
from .dataset import AttributedDataset
from .filters import TRUE, FilterExpr, canonical_key, canonicalize, subsumes_logical
from .poset import children_lists, transitive_reduction

SUBSUMPTION_MODES = ("logical", "bitmap")


@dataclass
class WorkloadTally:
    """Unique canonical filters with occurrence counts."""

    entries: list[tuple[FilterExpr, int]]

    def __post_init__(self) -> None:
        merged: dict[str, tuple[FilterExpr, int]] = {}
        for f, c in self.entries:
            c = int(c)
            if c < 1:
                raise ValueError("tally counts must be >= 1")
            f = canonicalize(f)
            key = canonical_key(f)
            if key in merged:
                merged[key] = (merged[key][0], merged[key][1] + c)
            else:
                merged[key] = (f, c)
        self.entries = [merged[k] for k in sorted(merged)]

    @classmethod
    def from_filters(cls, filters: Iterable[FilterExpr]) -> "WorkloadTally":
        counts: dict[str, tuple[FilterExpr, int]] = {}
        for f in filters:
            f = canonicalize(f)
            key = canonical_key(f)
            if key in counts:
                counts[key] = (counts[key][0], counts[key][1] + 1)
            else:
                counts[key] = (f, 1)
        return cls([counts[k] for k in sorted(counts)])

    def __len__(self) -> int:
        return len(self.entries)

    def total_mass(self) -> int:
        return sum(c for _, c in self.entries)


@dataclass
class CandidateNode:
    """One buildable subindex: its filter, fitted degree, size, and the
    tally entries (by index) its filter subsumes, pre-priced at sef=k."""

    filter: FilterExpr
    card: int
    m: int
    size: int
    served: np.ndarray
    serve_cost: np.ndarray
    children: list[int] = field(default_factory=list)
    parents: list[int] = field(default_factory=list)
    key: str = ""

    def __post_init__(self) -> None:
        if not self.key:
            self.key = canonical_key(self.filter)


@dataclass
class CandidateDag:
    """Candidate subindexes organized by subsumption; node 0 is the root
    (base index over the full dataset)."""

    nodes: list[CandidateNode]
    entry_filters: list[FilterExpr]
    entry_cards: np.ndarray
    counts: np.ndarray
    brute: np.ndarray
    n: int
    mode: str = "logical"
    rel: np.ndarray | None = None  # strict node-level subsumption, if known

    @property
    def root_id(self) -> int:
        return 0

    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u, node in enumerate(self.nodes) for v in node.children]

    def node_by_key(self, key: str) -> CandidateNode | None:
        for node in self.nodes:
            if node.key == key:
                return node
        return None


def build_candidate_dag(
    tally: WorkloadTally,
    ds: AttributedDataset,
    params: CostParams,
    mode: str = "logical",
    max_candidates: int | None = None,
) -> CandidateDag:
    """One candidate per unique tally filter (plus the root), edges by the
    chosen subsumption mode, transitively reduced.

    Zero-cardinality filters are dropped; filters whose support equals the
    whole dataset merge into the root, as do filters with bitwise-identical
    support (keeping the smallest canonical key as representative, which
    also keeps the strict relation acyclic). ``max_candidates`` keeps only
    the highest-count filters as candidates; all entries still count toward
    benefits.
    """
    if mode not in SUBSUMPTION_MODES:
        raise ValueError(f"unknown subsumption mode {mode!r}")
    n = ds.n

    live: list[tuple[FilterExpr, int, object]] = []
    for f, c in tally.entries:
        bm = bitmap(f, ds)
        if bm.count == 0:
            continue
        live.append((f, c, bm))

    entry_filters = [f for f, _, _ in live]
    entry_cards = np.array([bm.count for _, _, bm in live], dtype=np.int64)
    counts = np.array([c for _, c, _ in live], dtype=np.float64)
    brute = np.array([brute_cost(int(c), params.gamma) for c in entry_cards])

    candidate_idx = list(range(len(live)))
    if max_candidates is not None and len(candidate_idx) > max_candidates:
        candidate_idx = sorted(
            candidate_idx, key=lambda i: (-counts[i], canonical_key(entry_filters[i]))
        )[:max_candidates]
        candidate_idx.sort()

    # group candidates by identical support; drop full-support ones (root)
    groups: dict[bytes, list[int]] = {}
    for i in candidate_idx:
        if int(entry_cards[i]) == n:
            continue
        groups.setdefault(live[i][2].bits.tobytes(), []).append(i)
    reps = [
        min(idxs, key=lambda i: canonical_key(entry_filters[i]))
        for idxs in groups.values()
    ]
    reps.sort(key=lambda i: (-int(entry_cards[i]), canonical_key(entry_filters[i])))

    if mode == "logical":
        def det(i: int, j: int) -> bool:
            return subsumes_logical(entry_filters[i], entry_filters[j])
    else:
        def det(i: int, j: int) -> bool:
            return subsumes_bitmap(live[i][2], live[j][2])

    def make_node(f: FilterExpr, card: int, served_idx: list[int]) -> CandidateNode:
        m = m_downscale(card, n, params.m_inf) if card < n else params.m_inf
        served = np.asarray(served_idx, dtype=np.int64)
        cost = np.array(
            [indexed_cost(card, int(entry_cards[j]), params.k, params.cor)
             for j in served_idx]
        )
        return CandidateNode(filter=f, card=card, m=m,
                             size=index_model_size(card, m),
                             served=served, serve_cost=cost)

    root = make_node(TRUE, n, list(range(len(live))))
    nodes = [root]
    for i in reps:
        served = [j for j in range(len(live))
                  if int(entry_cards[i]) >= int(entry_cards[j]) and det(i, j)]
        nodes.append(make_node(entry_filters[i], int(entry_cards[i]), served))

    # strict relation among nodes (root subsumes every other node)
    k = len(nodes)
    rel = np.zeros((k, k), dtype=bool)
    rel[0, 1:] = True
    rep_of = {u: reps[u - 1] for u in range(1, k)}
    for u in range(1, k):
        for v in range(1, k):
            if u == v or nodes[u].card < nodes[v].card:
                continue
            if det(rep_of[u], rep_of[v]):
                rel[u, v] = True

    direct = transitive_reduction(rel)
    kids = children_lists(direct)
    for u, node in enumerate(nodes):
        node.children = kids[u]
    for u in range(k):
        for v in kids[u]:
            nodes[v].parents.append(u)

    return CandidateDag(nodes=nodes, entry_filters=entry_filters,
                        entry_cards=entry_cards, counts=counts, brute=brute,
                        n=n, mode=mode, rel=rel)


def prune_candidates(dag: CandidateDag, params: CostParams) -> CandidateDag:
    """Drop non-root candidates that cannot beat brute force even on their
    own filter at perfect selectivity; edges are re-stitched through the
    removed nodes so subsumption reachability is preserved."""
    keep = [0]
    for u, node in enumerate(dag.nodes):
        if u == 0:
            continue
        own = indexed_cost(node.card, node.card, params.k, params.cor)
        if own < brute_cost(node.card, params.gamma):
            keep.append(u)

    nodes = []
    for old in keep:
        src = dag.nodes[old]
        nodes.append(CandidateNode(
            filter=src.filter, card=src.card, m=src.m, size=src.size,
            served=src.served.copy(), serve_cost=src.serve_cost.copy(),
            key=src.key))

    if dag.rel is not None:
        rel = dag.rel[np.ix_(keep, keep)]
    else:
        rel = _reachability(dag)[np.ix_(keep, keep)]
    direct = transitive_reduction(rel)
    kids = children_lists(direct)
    for u, node in enumerate(nodes):
        node.children = kids[u]
    for u in range(len(nodes)):
        for v in kids[u]:
            nodes[v].parents.append(u)
    return CandidateDag(nodes=nodes, entry_filters=dag.entry_filters,
                        entry_cards=dag.entry_cards, counts=dag.counts,
                        brute=dag.brute, n=dag.n, mode=dag.mode, rel=rel)


def _reachability(dag: CandidateDag) -> np.ndarray:
    k = len(dag.nodes)
    rel = np.zeros((k, k), dtype=bool)
    for u in range(k):
        stack = list(dag.nodes[u].children)
        while stack:
            v = stack.pop()
            if rel[u, v]:
                continue
            rel[u, v] = True
            stack.extend(dag.nodes[v].children)
    return rel


@dataclass
class SelectionResult:
    """GreedyRatio output: chosen node ids (root always included), the
    per-step log, and the resulting workload serving cost."""

    chosen: list[int]
    chosen_filters: list[FilterExpr]
    total_size: int
    steps: list[tuple[str, float, int]]  # (canonical filter, unit benefit, cum size)
    final_cost: float


def _current_costs(dag: CandidateDag, chosen: Iterable[int]) -> np.ndarray:
    cur = dag.brute.copy()
    for u in chosen:
        node = dag.nodes[u]
        if node.served.size:
            cur[node.served] = np.minimum(cur[node.served], node.serve_cost)
    return cur


def _benefit(dag: CandidateDag, cur: np.ndarray, u: int) -> float:
    node = dag.nodes[u]
    if node.served.size == 0:
        return 0.0
    gain = cur[node.served] - node.serve_cost
    np.maximum(gain, 0.0, out=gain)
    return float(np.dot(dag.counts[node.served], gain))


def marginal_benefit(dag: CandidateDag, chosen: Iterable[int], candidate: int) -> float:
    """Workload-weighted serving-cost drop from adding ``candidate`` to the
    collection ``chosen`` (node ids; the root belongs there)."""
    cur = _current_costs(dag, chosen)
    return _benefit(dag, cur, candidate)


def greedy_ratio(dag: CandidateDag, params: CostParams,
                 lazy: bool = True) -> SelectionResult:
    """Select subindexes by descending unit marginal benefit until the
    budget admits no further positive-benefit candidate.

    Ties break deterministically by (unit benefit, raw benefit, canonical
    key). ``lazy=False`` recomputes every candidate each round; it selects
    the same sequence and exists as the reference for tests.
    """
    root = dag.nodes[0]
    budget = params.budget_b
    if budget < root.size:
        raise ValueError(
            f"budget {budget} is below the base index model size {root.size}"
        )
    chosen = [0]
    used = root.size
    cur = _current_costs(dag, chosen)
    steps: list[tuple[str, float, int]] = []

    if lazy:
        heap: list[tuple[float, float, str, int]] = []
        for u in range(1, len(dag.nodes)):
            b = _benefit(dag, cur, u)
            if b > 0:
                heapq.heappush(heap, (-b / dag.nodes[u].size, -b, dag.nodes[u].key, u))
        while heap:
            neg_unit, neg_raw, key, u = heapq.heappop(heap)
            node = dag.nodes[u]
            if used + node.size > budget:
                continue  # budget only shrinks; drop for good
            b = _benefit(dag, cur, u)
            if b <= 0:
                continue
            entry = (-b / node.size, -b, key, u)
            if heap and entry > heap[0]:
                heapq.heappush(heap, entry)
                continue
            chosen.append(u)
            used += node.size
            if node.served.size:
                cur[node.served] = np.minimum(cur[node.served], node.serve_cost)
            steps.append((node.key, b / node.size, used))
    else:
        remaining = set(range(1, len(dag.nodes)))
        while True:
            best: tuple[float, float, str, int] | None = None
            for u in sorted(remaining):
                node = dag.nodes[u]
                if used + node.size > budget:
                    continue
                b = _benefit(dag, cur, u)
                if b <= 0:
                    continue
                entry = (-b / node.size, -b, node.key, u)
                if best is None or entry < best:
                    best = entry
            if best is None:
                break
            _, neg_raw, key, u = best
            node = dag.nodes[u]
            chosen.append(u)
            remaining.discard(u)
            used += node.size
            if node.served.size:
                cur[node.served] = np.minimum(cur[node.served], node.serve_cost)
            steps.append((key, -best[0], used))

    final_cost = float(np.dot(dag.counts, cur))
    return SelectionResult(
        chosen=chosen,
        chosen_filters=[dag.nodes[u].filter for u in chosen],
        total_size=used,
        steps=steps,
        final_cost=final_cost,
    )


def collection_cost(dag: CandidateDag, chosen: Iterable[int]) -> float:
    """Workload-weighted serving cost of a chosen node set (with brute
    force always available)."""
    cur = _current_costs(dag, chosen)
    return float(np.dot(dag.counts, cur))


@dataclass
class RefitResult:
    to_build: list[FilterExpr]
    to_delete: list[FilterExpr]
    selection: SelectionResult
    dag: CandidateDag


def refit(
    old: SelectionResult,
    new_tally: WorkloadTally,
    ds: AttributedDataset,
    params: CostParams,
    mode: str = "logical",
    prune: bool = True,
    max_candidates: int | None = None,
) -> RefitResult:
    """Re-solve selection for a shifted workload and diff against ``old``.

    The base index never appears in either diff set; only subindexes are
    built or deleted.
    """
    dag = build_candidate_dag(new_tally, ds, params, mode=mode,
                              max_candidates=max_candidates)
    if prune:
        dag = prune_candidates(dag, params)
    sel = greedy_ratio(dag, params)
    old_keys = {canonical_key(f) for f in old.chosen_filters} - {canonical_key(TRUE)}
    new_by_key = {canonical_key(f): f for f in sel.chosen_filters}
    new_keys = set(new_by_key) - {canonical_key(TRUE)}
    old_by_key = {canonical_key(f): f for f in old.chosen_filters}
    to_build = [new_by_key[k] for k in sorted(new_keys - old_keys)]
    to_delete = [old_by_key[k] for k in sorted(old_keys - new_keys)]
    return RefitResult(to_build=to_build, to_delete=to_delete, selection=sel,
                       dag=dag)


# -- selection manifest --------------------------------------------------


def selection_manifest(sel: SelectionResult, dag: CandidateDag,
                       params: CostParams) -> dict:
    """JSON-ready description of a selection, consumed by the serving
    loader and the refit diff."""
    return {
        "format": "fitann-selection",
        "version": 1,
        "mode": dag.mode,
        "dataset_n": dag.n,
        "params": {
            "m_inf": params.m_inf,
            "sef_inf": params.sef_inf,
            "k": params.k,
            "gamma": params.gamma,
            "cor": params.cor,
            "budget_b": params.budget_b if math.isfinite(params.budget_b) else None,
            "efc": params.efc,
        },
        "subindexes": [
            {
                "filter": dag.nodes[u].key,
                "card": dag.nodes[u].card,
                "m": dag.nodes[u].m,
                "size": dag.nodes[u].size,
            }
            for u in sel.chosen
        ],
        "steps": [list(s) for s in sel.steps],
        "total_size": sel.total_size,
        "final_cost": sel.final_cost,
    }


def write_manifest(path, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "fitann-selection":
        raise ValueError(f"not a selection manifest: {path}")
    return manifest
