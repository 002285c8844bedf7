"""Numba kernels for graph build and search.

Adjacency layout: one int32 array per layer of shape [n, cap+1]; column 0
holds the degree, columns 1..deg the neighbor local ids. Heaps are array
pairs (dist, id) with deterministic (dist, id) tie ordering, so searches
are reproducible bit-for-bit.
"""
from __future__ import annotations

import numpy as np
from numba import njit

INT = np.int32

METRIC_L2 = 0
METRIC_IP = 1


@njit(cache=True, nogil=True, inline="always")
def _dist(vecs, i, q, metric):
    acc = 0.0
    if metric == METRIC_L2:
        for j in range(q.shape[0]):
            d = np.float64(vecs[i, j]) - np.float64(q[j])
            acc += d * d
    else:
        for j in range(q.shape[0]):
            acc -= np.float64(vecs[i, j]) * np.float64(q[j])
    return acc


@njit(cache=True, nogil=True)
def _push_min(hd, hi, n, d, i):
    hd[n] = d
    hi[n] = i
    c = n
    while c > 0:
        p = (c - 1) >> 1
        if hd[p] > hd[c] or (hd[p] == hd[c] and hi[p] > hi[c]):
            hd[p], hd[c] = hd[c], hd[p]
            hi[p], hi[c] = hi[c], hi[p]
            c = p
        else:
            break
    return n + 1


@njit(cache=True, nogil=True)
def _pop_min(hd, hi, n):
    n -= 1
    hd[0] = hd[n]
    hi[0] = hi[n]
    p = 0
    while True:
        l = 2 * p + 1
        r = l + 1
        m = p
        if l < n and (hd[l] < hd[m] or (hd[l] == hd[m] and hi[l] < hi[m])):
            m = l
        if r < n and (hd[r] < hd[m] or (hd[r] == hd[m] and hi[r] < hi[m])):
            m = r
        if m == p:
            break
        hd[p], hd[m] = hd[m], hd[p]
        hi[p], hi[m] = hi[m], hi[p]
        p = m
    return n


@njit(cache=True, nogil=True)
def _push_max(hd, hi, n, d, i):
    hd[n] = d
    hi[n] = i
    c = n
    while c > 0:
        p = (c - 1) >> 1
        if hd[p] < hd[c] or (hd[p] == hd[c] and hi[p] < hi[c]):
            hd[p], hd[c] = hd[c], hd[p]
            hi[p], hi[c] = hi[c], hi[p]
            c = p
        else:
            break
    return n + 1


@njit(cache=True, nogil=True)
def _pop_max(hd, hi, n):
    n -= 1
    hd[0] = hd[n]
    hi[0] = hi[n]
    p = 0
    while True:
        l = 2 * p + 1
        r = l + 1
        m = p
        if l < n and (hd[l] > hd[m] or (hd[l] == hd[m] and hi[l] > hi[m])):
            m = l
        if r < n and (hd[r] > hd[m] or (hd[r] == hd[m] and hi[r] > hi[m])):
            m = r
        if m == p:
            break
        hd[p], hd[m] = hd[m], hd[p]
        hi[p], hi[m] = hi[m], hi[p]
        p = m
    return n


@njit(cache=True, nogil=True)
def search_layer(vecs, metric, adj, q, eps, ep_dists, ef, visited, mask,
                 use_mask, out_ids, out_dists):
    """One-layer beam search with a dynamic candidate list of size ``ef``.

    With ``use_mask``, the mask gates result admission only; traversal and
    distance computations cover every visited node (result-set filtering).
    Writes up to ``ef`` results ascending by (distance, id); returns count.
    """
    cand_cap = 1024
    cand_d = np.empty(cand_cap, np.float64)
    cand_i = np.empty(cand_cap, INT)
    n_cand = 0
    res_d = np.empty(ef + 1, np.float64)
    res_i = np.empty(ef + 1, INT)
    n_res = 0

    for t in range(eps.shape[0]):
        node = eps[t]
        if visited[node]:
            continue
        visited[node] = 1
        d = ep_dists[t]
        n_cand = _push_min(cand_d, cand_i, n_cand, d, node)
        if (not use_mask) or mask[node]:
            n_res = _push_max(res_d, res_i, n_res, d, node)
            if n_res > ef:
                n_res = _pop_max(res_d, res_i, n_res)

    while n_cand > 0:
        d0 = cand_d[0]
        node = cand_i[0]
        n_cand = _pop_min(cand_d, cand_i, n_cand)
        if n_res >= ef and d0 > res_d[0]:
            break
        deg = adj[node, 0]
        for e in range(1, deg + 1):
            nb = adj[node, e]
            if visited[nb]:
                continue
            visited[nb] = 1
            d = _dist(vecs, nb, q, metric)
            if n_res < ef or d < res_d[0] or (d == res_d[0] and nb < res_i[0]):
                if n_cand >= cand_d.shape[0]:
                    grown_d = np.empty(cand_d.shape[0] * 2, np.float64)
                    grown_i = np.empty(cand_d.shape[0] * 2, INT)
                    grown_d[:n_cand] = cand_d[:n_cand]
                    grown_i[:n_cand] = cand_i[:n_cand]
                    cand_d = grown_d
                    cand_i = grown_i
                n_cand = _push_min(cand_d, cand_i, n_cand, d, nb)
                if (not use_mask) or mask[nb]:
                    n_res = _push_max(res_d, res_i, n_res, d, nb)
                    if n_res > ef:
                        n_res = _pop_max(res_d, res_i, n_res)

    cnt = n_res
    for pos in range(cnt - 1, -1, -1):
        out_dists[pos] = res_d[0]
        out_ids[pos] = res_i[0]
        n_res = _pop_max(res_d, res_i, n_res)
    return cnt


@njit(cache=True, nogil=True)
def _evict_slot(vecs, metric, adj, indeg, nb, floor_dist, use_floor):
    """Slot of nb's farthest evictable edge (never a target's last in-edge).
    With ``use_floor``, only edges farther than ``floor_dist`` qualify.
    Returns -1 when nothing qualifies."""
    deg = adj[nb, 0]
    worst = floor_dist
    worst_at = -1
    for e in range(1, deg + 1):
        tgt = adj[nb, e]
        if indeg[tgt] < 2:
            continue
        d = _dist(vecs, tgt, vecs[nb], metric)
        if worst_at == -1 and not use_floor:
            worst = d
            worst_at = e
        elif d > worst or (d == worst and worst_at >= 0
                           and tgt > adj[nb, worst_at]):
            worst = d
            worst_at = e
    return worst_at


@njit(cache=True, nogil=True)
def link_node(vecs, metric, adj, indeg, cap, node, cand_ids, cand_dists,
              cnt, m):
    """Wire ``node`` to its closest ``m`` candidates and add reverse edges
    (closest-M heuristic). A full neighbor evicts its farthest edge, but
    never an edge that is some node's last in-edge; if every neighbor
    declines, the closest one is forced to adopt ``node`` so no node is
    left without in-edges."""
    take = min(m, cnt)
    adj[node, 0] = take
    for t in range(take):
        adj[node, t + 1] = cand_ids[t]
        indeg[cand_ids[t]] += 1
    for t in range(take):
        nb = cand_ids[t]
        deg = adj[nb, 0]
        if deg < cap:
            adj[nb, deg + 1] = node
            adj[nb, 0] = deg + 1
            indeg[node] += 1
        else:
            slot = _evict_slot(vecs, metric, adj, indeg, nb,
                               cand_dists[t], True)
            if slot >= 0:
                indeg[adj[nb, slot]] -= 1
                adj[nb, slot] = node
                indeg[node] += 1
    if indeg[node] == 0:
        for t in range(cnt):
            nb = cand_ids[t]
            deg = adj[nb, 0]
            if deg < cap:
                adj[nb, deg + 1] = node
                adj[nb, 0] = deg + 1
                indeg[node] += 1
                break
            slot = _evict_slot(vecs, metric, adj, indeg, nb, 0.0, False)
            if slot >= 0:
                indeg[adj[nb, slot]] -= 1
                adj[nb, slot] = node
                indeg[node] += 1
                break
