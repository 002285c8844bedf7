import numpy as np
import pytest

from fitann import (AttributedDataset, AttributeSet, Bitmap, HnswGraph,
                    brute_force_knn)


def _gaussian(n, d, seed=0):
    return np.random.default_rng(seed).standard_normal((n, d)).astype(np.float32)


def _plain_ds(vectors, metric="l2"):
    return AttributedDataset(vectors=vectors,
                             attributes=[AttributeSet()] * len(vectors),
                             metric=metric)


def _full_sort_oracle(ds, rows, q, k):
    d = ds.distances(q, rows)
    order = np.lexsort((rows, d))[:k]
    return rows[order], d[order]


@pytest.fixture(scope="module")
def medium_graph():
    X = _gaussian(1000, 8, seed=1)
    return X, HnswGraph.build(X, m=16, efc=40, seed=3)


class TestBuild:
    def test_single_vector(self):
        g = HnswGraph.build(np.ones((1, 4), np.float32), m=4, efc=10, seed=0)
        assert g.node_count == 1
        assert g.entry == 0
        res = g.search_filtered(np.ones(4, np.float32), k=1, sef=1)
        assert res.ids.tolist() == [0]

    def test_empty_is_error(self):
        with pytest.raises(ValueError):
            HnswGraph.build(np.empty((0, 4), np.float32), m=4, efc=10, seed=0)

    def test_parameter_validation(self):
        X = _gaussian(10, 4)
        with pytest.raises(ValueError):
            HnswGraph.build(X, m=1, efc=10, seed=0)
        with pytest.raises(ValueError):
            HnswGraph.build(X, m=4, efc=0, seed=0)

    def test_degree_caps(self, medium_graph):
        _, g = medium_graph
        for layer, adj in enumerate(g.adjs):
            cap = g.degree_cap(layer)
            assert int(adj[:, 0].max()) <= cap

    def test_layer_membership_nested(self, medium_graph):
        # a node with edges at layer L must have level >= L
        _, g = medium_graph
        for layer, adj in enumerate(g.adjs):
            members = np.nonzero(adj[:, 0] > 0)[0]
            assert np.all(g.levels[members] >= layer)

    def test_all_nodes_reachable_at_base(self, medium_graph):
        _, g = medium_graph
        seen = np.zeros(g.node_count, bool)
        stack = [g.entry]
        seen[g.entry] = True
        adj = g.adjs[0]
        while stack:
            u = stack.pop()
            deg = adj[u, 0]
            for v in adj[u, 1:deg + 1]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(int(v))
        assert seen.all()

    def test_deterministic(self):
        X = _gaussian(300, 8, seed=5)
        a = HnswGraph.build(X, m=8, efc=20, seed=11)
        b = HnswGraph.build(X, m=8, efc=20, seed=11)
        assert a.entry == b.entry and a.max_level == b.max_level
        assert np.array_equal(a.levels, b.levels)
        for la, lb in zip(a.adjs, b.adjs):
            assert np.array_equal(la, lb)

    def test_seed_changes_graph(self):
        X = _gaussian(300, 8, seed=5)
        a = HnswGraph.build(X, m=8, efc=20, seed=11)
        b = HnswGraph.build(X, m=8, efc=20, seed=12)
        assert any(not np.array_equal(la, lb) for la, lb in zip(a.adjs, b.adjs))


class TestSearchFiltered:
    def test_exhaustive_sef_matches_brute(self, medium_graph):
        X, g = medium_graph
        ds = _plain_ds(X)
        bm = Bitmap.ones(len(X))
        q = _gaussian(1, 8, seed=9)[0]
        got = g.search_filtered(q, k=10, sef=len(X), bm=bm)
        want = brute_force_knn(ds, bm, q, 10)
        assert got.ids.tolist() == want.ids.tolist()

    def test_zero_passing_bits(self, medium_graph):
        X, g = medium_graph
        res = g.search_filtered(X[0], k=5, sef=50, bm=Bitmap.zeros(len(X)))
        assert len(res) == 0

    def test_filter_safety(self, medium_graph):
        X, g = medium_graph
        rng = np.random.default_rng(2)
        for _ in range(25):
            bm = Bitmap(rng.random(len(X)) < 0.2)
            q = rng.standard_normal(8).astype(np.float32)
            res = g.search_filtered(q, k=10, sef=40, bm=bm)
            assert all(bm.get(int(i)) for i in res.ids)

    def test_distances_ascending(self, medium_graph):
        X, g = medium_graph
        res = g.search_filtered(X[3], k=20, sef=50)
        assert np.all(np.diff(res.distances) >= 0)

    def test_sef_below_k_rejected(self, medium_graph):
        _, g = medium_graph
        with pytest.raises(ValueError):
            g.search_filtered(np.zeros(8, np.float32), k=10, sef=5)

    def test_fewer_passing_than_k_returns_all(self, medium_graph):
        X, g = medium_graph
        bm = Bitmap.from_indices(len(X), [4, 7, 13])
        res = g.search_filtered(X[4], k=10, sef=len(X), bm=bm)
        assert sorted(res.ids.tolist()) == [4, 7, 13]

    def test_selectivity_regression_recall(self):
        # 10K gaussian rows, 10% random bitmap, sef=50: recall@10 >= 0.8
        X = _gaussian(10_000, 16, seed=21)
        g = HnswGraph.build(X, m=16, efc=40, seed=22)
        ds = _plain_ds(X)
        rng = np.random.default_rng(23)
        bm = Bitmap(rng.random(len(X)) < 0.1)
        hits = total = 0
        for _ in range(50):
            q = rng.standard_normal(16).astype(np.float32)
            got = g.search_filtered(q, k=10, sef=50, bm=bm)
            want = brute_force_knn(ds, bm, q, 10)
            hits += len(set(got.ids.tolist()) & set(want.ids.tolist()))
            total += len(want)
        assert hits / total >= 0.8

    def test_monotone_recall_in_sef(self):
        X = _gaussian(2000, 12, seed=31)
        g = HnswGraph.build(X, m=12, efc=40, seed=32)
        ds = _plain_ds(X)
        rng = np.random.default_rng(33)
        queries = rng.standard_normal((100, 12)).astype(np.float32)
        bm = Bitmap.ones(len(X))
        truth = [set(brute_force_knn(ds, bm, q, 10).ids.tolist()) for q in queries]
        recalls = []
        for sef in (10, 20, 40, 80, 160, 320):
            r = np.mean([
                len(set(g.search_filtered(q, 10, sef).ids.tolist()) & t) / 10
                for q, t in zip(queries, truth)
            ])
            recalls.append(r)
        assert all(b >= a for a, b in zip(recalls, recalls[1:]))

    def test_recall_one_at_passing_count_on_small_connected_graph(self):
        X = _gaussian(180, 6, seed=41)
        g = HnswGraph.build(X, m=8, efc=30, seed=42)
        # precondition: connected base layer
        adj = g.adjs[0]
        seen = {g.entry}
        stack = [g.entry]
        while stack:
            u = stack.pop()
            for v in adj[u, 1:adj[u, 0] + 1]:
                if int(v) not in seen:
                    seen.add(int(v))
                    stack.append(int(v))
        assert len(seen) == len(X)
        ds = _plain_ds(X)
        rng = np.random.default_rng(43)
        for _ in range(20):
            bm = Bitmap(rng.random(len(X)) < 0.4)
            n_pass = bm.count
            if n_pass == 0:
                continue
            k = min(10, n_pass)
            q = rng.standard_normal(6).astype(np.float32)
            got = g.search_filtered(q, k=k, sef=max(k, n_pass), bm=bm)
            want = brute_force_knn(ds, bm, q, k)
            assert got.ids.tolist() == want.ids.tolist()


class TestBruteForce:
    def test_single_set_bit(self):
        X = _gaussian(50, 4, seed=51)
        ds = _plain_ds(X)
        res = brute_force_knn(ds, Bitmap.from_indices(50, [17]), X[0], 1)
        assert res.ids.tolist() == [17]

    def test_all_ones_global_topk(self):
        X = _gaussian(200, 4, seed=52)
        ds = _plain_ds(X)
        q = X[5]
        res = brute_force_knn(ds, Bitmap.ones(200), q, 7)
        rows = np.arange(200)
        want_ids, want_d = _full_sort_oracle(ds, rows, q, 7)
        assert res.ids.tolist() == want_ids.tolist()
        assert np.allclose(res.distances, want_d)

    def test_bit_exact_vs_full_sort_oracle(self):
        rng = np.random.default_rng(53)
        X = _gaussian(500, 6, seed=54)
        for metric in ("l2", "ip"):
            ds = _plain_ds(X, metric=metric)
            for _ in range(20):
                bm = Bitmap(rng.random(500) < 0.3)
                if bm.count == 0:
                    continue
                q = rng.standard_normal(6).astype(np.float32)
                res = brute_force_knn(ds, bm, q, 10)
                want_ids, want_d = _full_sort_oracle(ds, bm.nonzero(), q, 10)
                assert res.ids.tolist() == want_ids.tolist()
                assert np.array_equal(res.distances, want_d)


class TestSnapshot:
    def test_round_trip_bit_exact(self, tmp_path, medium_graph):
        X, g = medium_graph
        p1 = tmp_path / "g1.bin"
        p2 = tmp_path / "g2.bin"
        g.save(p1)
        g2 = HnswGraph.load(p1, X)
        assert (g2.m, g2.efc, g2.seed, g2.metric) == (g.m, g.efc, g.seed, g.metric)
        assert g2.entry == g.entry and g2.max_level == g.max_level
        assert np.array_equal(g2.rowids, g.rowids)
        assert np.array_equal(g2.levels, g.levels)
        for a, b in zip(g.adjs, g2.adjs):
            assert np.array_equal(a, b)
        g2.save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_search_identical_after_reload(self, tmp_path, medium_graph):
        X, g = medium_graph
        path = tmp_path / "g.bin"
        g.save(path)
        g2 = HnswGraph.load(path, X)
        q = _gaussian(1, 8, seed=77)[0]
        a = g.search_filtered(q, k=10, sef=40)
        b = g2.search_filtered(q, k=10, sef=40)
        assert a.ids.tolist() == b.ids.tolist()

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"not a graph at all")
        with pytest.raises(ValueError):
            HnswGraph.load(path, np.zeros((1, 2), np.float32))


def test_model_size():
    X = _gaussian(40, 4, seed=61)
    g = HnswGraph.build(X, m=5, efc=10, seed=62, rowids=np.arange(100, 140))
    assert g.model_size() == 200
    assert g.byte_size() > 0


def test_subset_rowids_map_back(medium_graph):
    X, _ = medium_graph
    rows = np.arange(100, 200)
    g = HnswGraph.build(X[rows], m=8, efc=20, seed=63, rowids=rows)
    res = g.search_filtered(X[150], k=5, sef=20)
    assert set(res.ids.tolist()) <= set(rows.tolist())
    assert 150 in res.ids.tolist()


def test_inner_product_metric():
    X = _gaussian(300, 8, seed=71)
    ds = _plain_ds(X, metric="ip")
    g = HnswGraph.build(X, m=12, efc=40, seed=72, metric="ip")
    q = X[3]
    got = g.search_filtered(q, k=5, sef=300)
    want = brute_force_knn(ds, Bitmap.ones(300), q, 5)
    assert got.ids.tolist() == want.ids.tolist()
