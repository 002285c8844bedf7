"""Query serving over a built index collection.

For each query the engine computes the filter bitmap once, walks the
collection's subsumption diagram to the smallest subindex that covers the
filter, prices indexed search (at a downscaled exploration factor) against
a brute-force scan, and runs the cheaper one. An optional multi-subindex
planner covers a filter with several subindexes via greedy weighted set
cover; it is off by default.
"""
from __future__ import annotations

import hashlib
import json
import os
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .bitmaps import Bitmap, bitmap, subsumes_bitmap
from .costmodel import CostParams, brute_cost, indexed_cost, sef_downscale
from .dataset import AttributedDataset
from .filters import TRUE, FilterExpr, canonical_key, parse, subsumes_logical
from .hnsw import HnswGraph, SearchResult, brute_force_knn
from .optimizer import (CandidateDag, SelectionResult, read_manifest,
                        selection_manifest, write_manifest)
from .poset import children_lists, subsumption_relation, transitive_reduction


@dataclass
class SubindexEntry:
    filter: FilterExpr
    key: str
    card: int
    m: int
    graph: HnswGraph
    rowids: np.ndarray
    _mask: np.ndarray | None = field(default=None, repr=False)

    def member_mask(self, n: int) -> np.ndarray:
        if self._mask is None:
            mask = np.zeros(n, dtype=bool)
            mask[self.rowids] = True
            self._mask = mask
        return self._mask


@dataclass
class ServingPlan:
    """Chosen execution strategy with the model costs of the alternatives."""

    strategy: str  # "indexed" | "brute" | "multi"
    subindex: int | None = None
    sef: int | None = None
    multi: list[tuple[int, int]] | None = None  # (subindex id, sef) pairs
    est_cost: float = 0.0
    alternatives: dict = field(default_factory=dict)


class IndexCollection:
    """Immutable bundle of the base index plus chosen subindexes, organized
    as a subsumption diagram rooted at the base."""

    def __init__(self, ds: AttributedDataset, params: CostParams,
                 entries: list[SubindexEntry], mode: str = "logical",
                 multi_index: bool = False):
        if not entries or not isinstance(entries[0].filter, type(TRUE)):
            raise ValueError("entry 0 must be the base index (true filter)")
        self.ds = ds
        self.params = params
        self.entries = entries
        self.mode = mode
        self.multi_index = multi_index
        self._entry_bitmaps = [
            Bitmap(e.member_mask(ds.n).copy()) for e in entries
        ]
        supports: dict[bytes, str] = {}
        for e, bm in zip(entries, self._entry_bitmaps):
            dup = supports.setdefault(bm.bits.tobytes(), e.key)
            if dup != e.key:
                raise ValueError(
                    f"filters {dup!r} and {e.key!r} index the same rows; "
                    "merge equal-support filters before building a collection"
                )
        self.children = build_hasse(
            [e.filter for e in entries],
            [e.card for e in entries],
            mode,
            self._entry_bitmaps,
        )

    # -- construction ------------------------------------------------------

    @classmethod
    def build(cls, ds: AttributedDataset, specs: list[tuple[FilterExpr, int]],
              params: CostParams, mode: str = "logical", seed: int = 0,
              workers: int = 1, multi_index: bool = False) -> "IndexCollection":
        """Build graphs for (filter, degree) specs; the first spec must be
        the base (true filter, degree m_inf). Builds are independent and
        deterministic, so they may run on ``workers`` threads."""
        if not specs or not isinstance(specs[0][0], type(TRUE)):
            raise ValueError("specs[0] must be the base index (true filter)")

        def build_one(spec: tuple[FilterExpr, int]) -> SubindexEntry:
            f, m = spec
            bm = bitmap(f, ds)
            rows = bm.nonzero()
            if rows.shape[0] == 0:
                raise ValueError(f"cannot build a subindex for empty filter {canonical_key(f)!r}")
            graph = HnswGraph.build(
                ds.vectors[rows], m=m, efc=params.efc,
                seed=_derive_seed(seed, canonical_key(f)), metric=ds.metric,
                rowids=rows,
            )
            return SubindexEntry(filter=f, key=canonical_key(f),
                                 card=int(rows.shape[0]), m=m, graph=graph,
                                 rowids=rows)

        if workers > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=workers) as pool:
                entries = list(pool.map(build_one, specs))
        else:
            entries = [build_one(s) for s in specs]
        return cls(ds, params, entries, mode=mode, multi_index=multi_index)

    @classmethod
    def from_selection(cls, ds: AttributedDataset, sel: SelectionResult,
                       dag: CandidateDag, params: CostParams, seed: int = 0,
                       workers: int = 1, multi_index: bool = False) -> "IndexCollection":
        specs = [(dag.nodes[u].filter, dag.nodes[u].m) for u in sel.chosen]
        return cls.build(ds, specs, params, mode=dag.mode, seed=seed,
                         workers=workers, multi_index=multi_index)

    @property
    def n_subindexes(self) -> int:
        return len(self.entries)

    def model_size(self) -> int:
        return sum(e.graph.model_size() for e in self.entries)

    def byte_size(self) -> int:
        return sum(e.graph.byte_size() for e in self.entries)

    # -- lookup ------------------------------------------------------------

    def find_best_subindex(self, f: FilterExpr,
                           query_bm: Bitmap | None = None,
                           count_visits: bool = False):
        """BFS from the base, descending only into subsuming children, to
        the minimum-cardinality subindex covering ``f``. A node that fails
        the check prunes its whole subtree. Ties break by canonical key."""
        if self.mode == "bitmap":
            if query_bm is None:
                query_bm = bitmap(f, self.ds)

            def covers(idx: int) -> bool:
                return subsumes_bitmap(self._entry_bitmaps[idx], query_bm)
        else:
            def covers(idx: int) -> bool:
                return subsumes_logical(self.entries[idx].filter, f)

        best: int | None = None
        visits = 0
        seen = {0}
        queue: deque[int] = deque([0])
        while queue:
            u = queue.popleft()
            visits += 1
            if not covers(u):
                continue  # prune the subtree rooted here
            e = self.entries[u]
            if (best is None
                    or (e.card, e.key) < (self.entries[best].card,
                                          self.entries[best].key)):
                best = u
            for v in self.children[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        assert best is not None  # the base always covers
        if count_visits:
            return best, visits
        return best

    # -- planning and execution --------------------------------------------

    def plan(self, f: FilterExpr, query_bm: Bitmap | None = None,
             sef_inf: int | None = None) -> ServingPlan:
        """Price indexed search on the best covering subindex against a
        brute-force scan (and the multi-subindex union when enabled), and
        pick the cheapest."""
        p = self.params
        sef_inf = p.sef_inf if sef_inf is None else sef_inf
        if query_bm is None:
            query_bm = bitmap(f, self.ds)
        card_f = query_bm.count
        if card_f == 0:
            return ServingPlan(strategy="brute", est_cost=0.0,
                               alternatives={"brute": 0.0})

        best = self.find_best_subindex(f, query_bm)
        entry = self.entries[best]
        sef_h = sef_downscale(entry.card, self.ds.n, sef_inf, p.k)
        cost_idx = indexed_cost(entry.card, card_f, sef_h, p.cor)
        cost_bf = brute_cost(card_f, p.gamma)
        alternatives = {"indexed": cost_idx, "brute": cost_bf}

        plan = (ServingPlan(strategy="indexed", subindex=best, sef=sef_h,
                            est_cost=cost_idx, alternatives=alternatives)
                if cost_idx < cost_bf else
                ServingPlan(strategy="brute", est_cost=cost_bf,
                            alternatives=alternatives))

        if self.multi_index:
            multi = self.multi_index_plan(query_bm, sef_inf)
            if multi is not None:
                ids_sefs, cost_multi = multi
                alternatives["multi"] = cost_multi
                if cost_multi < plan.est_cost:
                    plan = ServingPlan(strategy="multi", multi=ids_sefs,
                                       est_cost=cost_multi,
                                       alternatives=alternatives)
        return plan

    def multi_index_plan(self, query_bm: Bitmap, sef_inf: int | None = None):
        """Greedy weighted set cover of the query bitmap by subindexes:
        repeatedly add the subindex with the best (serving cost using its
        exact conditional cardinality) / (newly covered passing rows)
        ratio. Returns ([(subindex, sef), ...], total cost), or None when
        the greedy immediately falls back to the base index (covering
        everything with the base is just base search)."""
        p = self.params
        sef_inf = p.sef_inf if sef_inf is None else sef_inf
        target = query_bm.bits
        remaining = target.copy()
        chosen: list[tuple[int, int]] = []
        chosen_ids: set[int] = set()
        total_cost = 0.0
        n = self.ds.n
        while remaining.any():
            best_pick = None
            for idx, entry in enumerate(self.entries):
                if idx in chosen_ids:
                    continue
                mask = entry.member_mask(n)
                newly = int(np.count_nonzero(remaining & mask))
                if newly == 0:
                    continue
                cond = int(np.count_nonzero(target & mask))
                sef_h = sef_downscale(entry.card, n, sef_inf, p.k)
                cost = indexed_cost(entry.card, cond, sef_h, p.cor)
                pick = (cost / newly, cost, entry.key, idx, sef_h)
                if best_pick is None or pick < best_pick:
                    best_pick = pick
            if best_pick is None:
                return None  # cannot make progress (unreachable: base covers)
            _, cost, _, idx, sef_h = best_pick
            if not chosen and idx == 0:
                return None  # base as first cover element: single-index case
            chosen.append((idx, sef_h, cost))
            chosen_ids.add(idx)
            remaining &= ~self.entries[idx].member_mask(n)
        if not chosen:
            return None
        # drop members made redundant by later picks, costliest first
        for idx, _, cost in sorted(chosen, key=lambda t: (-t[2], t[0])):
            others = np.zeros(n, dtype=bool)
            for j, _, _ in chosen:
                if j != idx:
                    others |= self.entries[j].member_mask(n)
            if len(chosen) > 1 and not np.any(target & ~others):
                chosen = [c for c in chosen if c[0] != idx]
        total_cost = sum(c for _, _, c in chosen)
        return [(idx, sef_h) for idx, sef_h, _ in chosen], total_cost

    def serve(self, q: np.ndarray, f: FilterExpr, k: int | None = None,
              sef_inf: int | None = None, with_plan: bool = False):
        """Execute the cheapest strategy for (q, f); every returned id
        satisfies ``f``."""
        p = self.params
        k = p.k if k is None else k
        query_bm = bitmap(f, self.ds)
        plan = self.plan(f, query_bm, sef_inf=sef_inf)
        if plan.strategy == "indexed":
            entry = self.entries[plan.subindex]
            sef = max(plan.sef, k)
            result = entry.graph.search_filtered(q, k, sef, query_bm)
        elif plan.strategy == "multi":
            result = self._serve_multi(q, k, plan, query_bm)
        else:
            result = brute_force_knn(self.ds, query_bm, q, k)
        if with_plan:
            return result, plan
        return result

    def _serve_multi(self, q: np.ndarray, k: int, plan: ServingPlan,
                     query_bm: Bitmap) -> SearchResult:
        best: dict[int, float] = {}
        for idx, sef in plan.multi:
            entry = self.entries[idx]
            part = entry.graph.search_filtered(q, k, max(sef, k), query_bm)
            for rid, dist in zip(part.ids.tolist(), part.distances.tolist()):
                if rid not in best or dist < best[rid]:
                    best[rid] = dist
        ranked = sorted(best.items(), key=lambda t: (t[1], t[0]))[:k]
        return SearchResult(
            ids=np.array([r for r, _ in ranked], dtype=np.int64),
            distances=np.array([d for _, d in ranked], dtype=np.float64),
        )

    # -- persistence ---------------------------------------------------------

    def save(self, out_dir) -> None:
        """Bundle: selection manifest + one graph snapshot per subindex +
        a checksum index."""
        os.makedirs(out_dir, exist_ok=True)
        graphs_dir = os.path.join(out_dir, "graphs")
        os.makedirs(graphs_dir, exist_ok=True)
        names = []
        for i, e in enumerate(self.entries):
            name = f"graphs/graph_{i:04d}.bin"
            e.graph.save(os.path.join(out_dir, name))
            names.append(name)
        manifest = {
            "format": "fitann-bundle",
            "version": 1,
            "mode": self.mode,
            "metric": self.ds.metric,
            "dataset_n": self.ds.n,
            "params": {
                "m_inf": self.params.m_inf,
                "sef_inf": self.params.sef_inf,
                "k": self.params.k,
                "gamma": self.params.gamma,
                "cor": self.params.cor,
                "efc": self.params.efc,
            },
            "subindexes": [
                {"filter": e.key, "card": e.card, "m": e.m, "graph": name}
                for e, name in zip(self.entries, names)
            ],
        }
        with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        sums = {}
        for name in ["manifest.json"] + names:
            sums[name] = _sha256(os.path.join(out_dir, name))
        with open(os.path.join(out_dir, "checksums.json"), "w", encoding="utf-8") as fh:
            json.dump(sums, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, bundle_dir, ds: AttributedDataset,
             mode: str | None = None, multi_index: bool = False) -> "IndexCollection":
        """Load a bundle, verifying checksums. Requesting a subsumption
        mode different from the one the bundle was built with is an error."""
        with open(os.path.join(bundle_dir, "checksums.json"), encoding="utf-8") as fh:
            sums = json.load(fh)
        for name, digest in sums.items():
            actual = _sha256(os.path.join(bundle_dir, name))
            if actual != digest:
                raise ValueError(f"checksum mismatch for {name} in {bundle_dir}")
        with open(os.path.join(bundle_dir, "manifest.json"), encoding="utf-8") as fh:
            manifest = json.load(fh)
        if manifest.get("format") != "fitann-bundle":
            raise ValueError(f"not a collection bundle: {bundle_dir}")
        if manifest["dataset_n"] != ds.n:
            raise ValueError(
                f"bundle was built over {manifest['dataset_n']} rows, dataset has {ds.n}"
            )
        if manifest["metric"] != ds.metric:
            raise ValueError("bundle metric does not match dataset metric")
        if mode is not None and mode != manifest["mode"]:
            raise ValueError(
                f"bundle uses {manifest['mode']} subsumption; cannot load as {mode}"
            )
        pm = manifest["params"]
        params = CostParams(m_inf=pm["m_inf"], sef_inf=pm["sef_inf"], k=pm["k"],
                            gamma=pm["gamma"], cor=pm["cor"], efc=pm["efc"])
        entries = []
        for spec in manifest["subindexes"]:
            graph = HnswGraph.load(os.path.join(bundle_dir, spec["graph"]),
                                   ds.vectors)
            entries.append(SubindexEntry(
                filter=parse(spec["filter"]), key=spec["filter"],
                card=spec["card"], m=spec["m"], graph=graph,
                rowids=graph.rowids))
        return cls(ds, params, entries, mode=manifest["mode"],
                   multi_index=multi_index)


def build_hasse(filters: list[FilterExpr], cards: list[int], mode: str,
                bitmaps: list[Bitmap] | None = None) -> list[list[int]]:
    """Transitive reduction of the subsumption relation among collection
    filters, as children lists; index 0 (the base) is the unique root.

    Filters are expected to have pairwise-distinct supports (equal-support
    candidates merge upstream); a mutually-subsuming pair that slips
    through anyway is oriented by canonical key so the result stays
    acyclic.
    """
    n = len(filters)
    if mode == "bitmap":
        if bitmaps is None:
            raise ValueError("bitmap mode requires entry bitmaps")
        rel = np.zeros((n, n), dtype=bool)
        for i in range(n):
            for j in range(n):
                if i != j and cards[i] >= cards[j] and subsumes_bitmap(
                        bitmaps[i], bitmaps[j]):
                    rel[i, j] = True
    else:
        rel = subsumption_relation(filters, cards, subsumes_logical)
    for i in range(n):
        for j in range(i + 1, n):
            if rel[i, j] and rel[j, i]:
                if canonical_key(filters[i]) <= canonical_key(filters[j]):
                    rel[j, i] = False
                else:
                    rel[i, j] = False
    return children_lists(transitive_reduction(rel))


def _derive_seed(base_seed: int, key: str) -> int:
    digest = hashlib.sha256(f"{base_seed}:{key}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


__all__ = [
    "IndexCollection",
    "ServingPlan",
    "SubindexEntry",
    "build_hasse",
    "selection_manifest",
    "read_manifest",
    "write_manifest",
]
