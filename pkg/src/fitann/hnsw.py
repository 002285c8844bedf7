"""Hierarchical small-world graph index with result-set filtering, plus the
exact brute-force fallback.

Graphs are built sequentially over a given row order with a seeded level
sampler, so identical inputs produce identical adjacency. A built graph is
immutable and safe for concurrent searches. Snapshots round-trip through a
versioned binary format that stores structure only; vectors are rebound
from the dataset at load time.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .bitmaps import Bitmap
from .dataset import AttributedDataset

_MAGIC = b"FANNGRPH"
_VERSION = 1
_METRIC_CODE = {"l2": K.METRIC_L2, "ip": K.METRIC_IP}
_METRIC_NAME = {v: k for k, v in _METRIC_CODE.items()}
_MAX_LEVEL_CAP = 48


@dataclass
class SearchResult:
    """Top-k ids (dataset rows) with ascending distances."""

    ids: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return int(self.ids.shape[0])


class HnswGraph:
    """A layered proximity graph over a subset of dataset rows.

    The base layer allows out-degree 2M, upper layers M. Filtering applies
    only to result admission at the base layer; upper-layer descent and
    distance computations ignore the bitmap.
    """

    def __init__(self, m, efc, seed, metric, rowids, vectors, levels, adjs,
                 entry, max_level):
        self.m = int(m)
        self.efc = int(efc)
        self.seed = int(seed)
        self.metric = metric
        self.rowids = rowids  # int64, dataset row per local id
        self.vectors = vectors  # float32 local copy, row i = rowids[i]
        self.levels = levels  # int32 per local id
        self.adjs = adjs  # per layer: int32 [n, cap+1], col 0 = degree
        self.entry = int(entry)
        self.max_level = int(max_level)

    # -- construction ------------------------------------------------------

    @classmethod
    def build(cls, vectors: np.ndarray, m: int, efc: int, seed: int,
              metric: str = "l2", rowids: np.ndarray | None = None) -> "HnswGraph":
        """Build by inserting rows in order. ``rowids`` maps local ids to
        dataset rows (identity if omitted)."""
        vectors = np.ascontiguousarray(np.asarray(vectors, dtype=np.float32))
        if vectors.ndim != 2 or vectors.shape[0] < 1:
            raise ValueError("cannot build a graph over an empty vector set")
        if m < 2:
            raise ValueError("m must be >= 2")
        if efc < 1:
            raise ValueError("efc must be >= 1")
        metric_code = _METRIC_CODE[metric]
        n = vectors.shape[0]
        if rowids is None:
            rowids = np.arange(n, dtype=np.int64)
        else:
            rowids = np.asarray(rowids, dtype=np.int64)
            if rowids.shape[0] != n:
                raise ValueError("rowids length must match vector count")

        rng = np.random.default_rng(seed)
        ml = 1.0 / np.log(m)
        levels = np.minimum(
            np.floor(-np.log(rng.random(n)) * ml).astype(np.int64), _MAX_LEVEL_CAP
        ).astype(np.int32)
        top = int(levels.max())
        caps = [2 * m] + [m] * top
        adjs = [np.zeros((n, caps[l] + 1), K.INT) for l in range(top + 1)]

        entry = 0
        max_level = int(levels[0])
        visited = np.zeros(n, np.uint8)
        indegs = [np.zeros(n, K.INT) for _ in range(top + 1)]
        buf = 2 * efc + 16
        out_ids = np.empty(buf, K.INT)
        out_dists = np.empty(buf, np.float64)
        nomask = np.empty(0, np.uint8)

        for i in range(1, n):
            lvl = int(levels[i])
            q = vectors[i]
            ep = np.array([entry], K.INT)
            epd = np.array(
                [K._dist(vectors, entry, q, metric_code)], np.float64
            )
            for l in range(max_level, lvl, -1):
                visited[:] = 0
                cnt = K.search_layer(vectors, metric_code, adjs[l], q, ep, epd,
                                     1, visited, nomask, False, out_ids, out_dists)
                ep = out_ids[:cnt].copy()
                epd = out_dists[:cnt].copy()
            for l in range(min(lvl, max_level), -1, -1):
                visited[:] = 0
                cnt = K.search_layer(vectors, metric_code, adjs[l], q, ep, epd,
                                     efc, visited, nomask, False, out_ids, out_dists)
                K.link_node(vectors, metric_code, adjs[l], indegs[l], caps[l],
                            i, out_ids[:cnt], out_dists[:cnt], cnt, m)
                ep = out_ids[:cnt].copy()
                epd = out_dists[:cnt].copy()
            if lvl > max_level:
                max_level = lvl
                entry = i

        _repair_base_connectivity(vectors, metric_code, adjs[0], indegs[0],
                                  caps[0], entry)
        return cls(m, efc, seed, metric, rowids, vectors, levels, adjs,
                   entry, max_level)

    # -- search ------------------------------------------------------------

    @property
    def node_count(self) -> int:
        return int(self.vectors.shape[0])

    def degree_cap(self, layer: int) -> int:
        return 2 * self.m if layer == 0 else self.m

    def search_filtered(self, q: np.ndarray, k: int, sef: int,
                        bm: Bitmap | None = None) -> SearchResult:
        """Filtered top-k search: greedy descent through upper layers, then
        a base-layer beam of width ``sef`` admitting only rows whose bit is
        set in ``bm`` (all rows when ``bm`` is None)."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if sef < k:
            raise ValueError(f"sef {sef} must be >= k {k}")
        q = np.ascontiguousarray(np.asarray(q, dtype=np.float32))
        metric_code = _METRIC_CODE[self.metric]
        n = self.node_count
        if bm is not None:
            if len(bm) <= int(self.rowids.max()):
                raise ValueError(
                    f"bitmap length {len(bm)} does not cover dataset rows of this graph"
                )
            mask = bm.bits[self.rowids].astype(np.uint8)
            use_mask = True
        else:
            mask = np.empty(0, np.uint8)
            use_mask = False

        visited = np.zeros(n, np.uint8)
        out_ids = np.empty(sef + 16, K.INT)
        out_dists = np.empty(sef + 16, np.float64)
        ep = np.array([self.entry], K.INT)
        epd = np.array(
            [K._dist(self.vectors, self.entry, q, metric_code)], np.float64
        )
        nomask = np.empty(0, np.uint8)
        for l in range(self.max_level, 0, -1):
            visited[:] = 0
            cnt = K.search_layer(self.vectors, metric_code, self.adjs[l], q,
                                 ep, epd, 1, visited, nomask, False,
                                 out_ids, out_dists)
            ep = out_ids[:cnt].copy()
            epd = out_dists[:cnt].copy()
        visited[:] = 0
        cnt = K.search_layer(self.vectors, metric_code, self.adjs[0], q,
                             ep, epd, sef, visited, mask, use_mask,
                             out_ids, out_dists)
        take = min(k, cnt)
        local = out_ids[:take].astype(np.int64)
        return SearchResult(ids=self.rowids[local],
                            distances=out_dists[:take].copy())

    def model_size(self) -> int:
        """Budgeting units: degree parameter times indexed rows."""
        return self.m * self.node_count

    def byte_size(self) -> int:
        """Actual in-memory bytes (diagnostic only, never budgeted)."""
        total = self.vectors.nbytes + self.rowids.nbytes + self.levels.nbytes
        for a in self.adjs:
            total += a.nbytes
        return total

    # -- snapshot ----------------------------------------------------------

    def save(self, path) -> None:
        """Write the versioned binary snapshot (structure only)."""
        n = self.node_count
        parts = [
            _MAGIC,
            struct.pack("<IIIQBIII", _VERSION, self.m, self.efc,
                        self.seed & 0xFFFFFFFFFFFFFFFF,
                        _METRIC_CODE[self.metric], n, self.max_level + 1,
                        self.entry),
        ]
        for i in range(n):
            lvl = int(self.levels[i])
            parts.append(struct.pack("<QI", int(self.rowids[i]), lvl))
            for l in range(lvl + 1):
                deg = int(self.adjs[l][i, 0])
                parts.append(struct.pack("<I", deg))
                parts.append(
                    self.adjs[l][i, 1:deg + 1].astype("<u4").tobytes()
                )
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))

    @classmethod
    def load(cls, path, dataset_vectors: np.ndarray) -> "HnswGraph":
        """Read a snapshot and rebind vectors from the full dataset matrix."""
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:8] != _MAGIC:
            raise ValueError(f"not a graph snapshot: {path}")
        (version, m, efc, seed, metric_code, n, n_layers,
         entry) = struct.unpack_from("<IIIQBIII", blob, 8)
        if version != _VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        off = 8 + struct.calcsize("<IIIQBIII")
        max_level = n_layers - 1
        caps = [2 * m] + [m] * max_level
        adjs = [np.zeros((n, caps[l] + 1), K.INT) for l in range(n_layers)]
        rowids = np.empty(n, np.int64)
        levels = np.empty(n, np.int32)
        for i in range(n):
            rid, lvl = struct.unpack_from("<QI", blob, off)
            off += 12
            rowids[i] = rid
            levels[i] = lvl
            for l in range(lvl + 1):
                (deg,) = struct.unpack_from("<I", blob, off)
                off += 4
                nbrs = np.frombuffer(blob, "<u4", deg, off)
                off += 4 * deg
                adjs[l][i, 0] = deg
                adjs[l][i, 1:deg + 1] = nbrs
        vectors = np.ascontiguousarray(
            np.asarray(dataset_vectors, dtype=np.float32)[rowids]
        )
        return cls(m, efc, seed, _METRIC_NAME[metric_code], rowids, vectors,
                   levels, adjs, entry, max_level)


def _reachable_from(adj: np.ndarray, entry: int, n: int) -> np.ndarray:
    seen = np.zeros(n, dtype=bool)
    seen[entry] = True
    stack = [entry]
    while stack:
        u = stack.pop()
        deg = int(adj[u, 0])
        for e in range(1, deg + 1):
            v = int(adj[u, e])
            if not seen[v]:
                seen[v] = True
                stack.append(v)
    return seen


def _repair_base_connectivity(vectors, metric_code, adj, indeg, cap,
                              entry) -> None:
    """Reconnect any base-layer node unreachable from the entry point by
    wiring it to its nearest reachable node. Eviction never removes a
    repair edge or a target's last in-edge, so the pass terminates with
    every node reachable. Usually a no-op."""
    n = vectors.shape[0]
    if n <= 1:
        return
    protected: set[tuple[int, int]] = set()
    for _ in range(n):
        seen = _reachable_from(adj, entry, n)
        if seen.all():
            return
        orphan = int(np.nonzero(~seen)[0][0])
        reachable = np.nonzero(seen)[0]
        diff = vectors[reachable].astype(np.float64) - vectors[orphan].astype(np.float64)
        if metric_code == K.METRIC_L2:
            d = np.einsum("ij,ij->i", diff, diff)
        else:
            d = -(vectors[reachable].astype(np.float64)
                  @ vectors[orphan].astype(np.float64))
        for src in reachable[np.lexsort((reachable, d))]:
            src = int(src)
            deg = int(adj[src, 0])
            if deg < cap:
                adj[src, deg + 1] = orphan
                adj[src, 0] = deg + 1
            else:
                slot = -1
                worst = -np.inf
                for e in range(1, deg + 1):
                    tgt = int(adj[src, e])
                    if indeg[tgt] < 2 or (src, tgt) in protected:
                        continue
                    dd = float(K._dist(vectors, tgt, vectors[src], metric_code))
                    if dd > worst or (dd == worst and slot >= 0
                                      and tgt > int(adj[src, slot])):
                        worst = dd
                        slot = e
                if slot < 0:
                    continue  # try the next-nearest reachable source
                indeg[int(adj[src, slot])] -= 1
                adj[src, slot] = orphan
            indeg[orphan] += 1
            protected.add((src, orphan))
            break


def brute_force_knn(ds: AttributedDataset, bm: Bitmap, q: np.ndarray,
                    k: int) -> SearchResult:
    """Exact top-k among rows with set bits; ties broken by row id."""
    if len(bm) != ds.n:
        raise ValueError(f"bitmap length {len(bm)} != dataset size {ds.n}")
    rows = bm.nonzero()
    if rows.shape[0] == 0:
        return SearchResult(ids=np.empty(0, np.int64),
                            distances=np.empty(0, np.float64))
    d = ds.distances(q, rows)
    order = np.lexsort((rows, d))[:k]
    return SearchResult(ids=rows[order].astype(np.int64), distances=d[order])
