import itertools
import math

import numpy as np
import pytest

from fitann import (AttributeSet, AttributedDataset, Bitmap, CostParams,
                    IndexCollection, WorkloadTally, bitmap, brute_cost,
                    brute_force_knn, build_candidate_dag, build_hasse,
                    cardinality, greedy_ratio, indexed_cost, parse,
                    sef_downscale, subsumes_logical, to_text, TRUE)
from helpers import random_dataset, random_filter


@pytest.fixture(scope="module")
def worked_collection(worked_ds, worked_tally, worked_params):
    dag = build_candidate_dag(worked_tally, worked_ds, worked_params)
    sel = greedy_ratio(dag, worked_params)
    return IndexCollection.from_selection(worked_ds, sel, dag, worked_params,
                                          seed=5)


class TestHasse:
    def test_worked_collection_shape(self, worked_collection):
        coll = worked_collection
        by_key = {e.key: i for i, e in enumerate(coll.entries)}
        kids = {e.key: sorted(coll.entries[v].key for v in coll.children[i])
                for i, e in enumerate(coll.entries)}
        assert kids["*"] == ["A|B|C", "D"]
        assert kids["A|B|C"] == ["A"]
        assert kids["A"] == [] and kids["D"] == []
        assert by_key["*"] == 0

    def test_singleton_root_only(self, worked_ds, worked_params):
        coll = IndexCollection.build(worked_ds, [(TRUE, 10)], worked_params)
        assert coll.children == [[]]

    def test_matches_pairwise_reduction_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            filters = [TRUE]
            seen = {"*"}
            while len(filters) < 7:
                f = random_filter(rng, depth=1, allow_true=False)
                if to_text(f) not in seen:
                    seen.add(to_text(f))
                    filters.append(f)
            ds = random_dataset(rng, n=24)
            cards = [cardinality(f, ds) for f in filters]
            keep = [i for i, c in enumerate(cards) if c > 0 or i == 0]
            filters = [filters[i] for i in keep]
            cards = [max(cards[i], 1) if i == 0 else cards[i] for i in keep]
            cards[0] = ds.n
            got = build_hasse(filters, cards, "logical")
            # oracle: all subsumption pairs, remove two-step implications
            n = len(filters)
            rel = np.zeros((n, n), dtype=bool)
            for i in range(n):
                for j in range(n):
                    if i != j and cards[i] >= cards[j] and \
                            subsumes_logical(filters[i], filters[j]):
                        rel[i, j] = True
            want = rel.copy()
            for i, jj, w in itertools.product(range(n), repeat=3):
                if rel[i, w] and rel[w, jj]:
                    want[i, jj] = False
            for i in range(n):
                assert sorted(got[i]) == list(np.nonzero(want[i])[0])


class TestFindBest:
    def test_conjunction_routed_to_covering_subindex(self, worked_collection):
        coll = worked_collection
        best, visits = coll.find_best_subindex(parse("D&(C|E)"),
                                               count_visits=True)
        assert coll.entries[best].key == "D"
        # A|B|C fails the check, so its child A is never visited
        assert visits <= 3

    def test_unseen_filter_falls_back_to_base(self, worked_collection):
        best = worked_collection.find_best_subindex(parse("E|F"))
        assert worked_collection.entries[best].key == "*"

    def test_matches_linear_scan_oracle(self):
        rng = np.random.default_rng(9)
        params = CostParams(m_inf=4, sef_inf=4, k=2, budget_b=math.inf)
        for _ in range(10):
            ds = random_dataset(rng, n=40)
            specs = [(TRUE, 4)]
            supports = {bitmap(TRUE, ds).bits.tobytes()}
            while len(specs) < 8:
                f = random_filter(rng, depth=1, allow_true=False)
                bm = bitmap(f, ds)
                if bm.count == 0 or bm.bits.tobytes() in supports:
                    continue
                supports.add(bm.bits.tobytes())
                specs.append((f, 2))
            coll = IndexCollection.build(ds, specs, params, seed=3)
            for _ in range(50):
                q = random_filter(rng, depth=2)
                got = coll.find_best_subindex(q)
                covering = [
                    (e.card, e.key, i) for i, e in enumerate(coll.entries)
                    if subsumes_logical(e.filter, q)
                ]
                want = min(covering)[2]
                assert got == want

    def test_chain_visits_scale_with_pruning(self):
        # nested ranges form a chain; a non-matching query prunes at depth 1
        rng = np.random.default_rng(11)
        n = 32
        ds = AttributedDataset(
            vectors=rng.standard_normal((n, 3)).astype(np.float32),
            attributes=[AttributeSet(numerics={"x": float(i)},
                                     tokens={"T"} if i == 0 else set())
                        for i in range(n)])
        params = CostParams(m_inf=4, sef_inf=4, k=2, budget_b=math.inf)
        specs = [(TRUE, 4)] + [
            (parse(f"x:[0,{hi}]"), 2) for hi in range(20, 2, -2)
        ]
        coll = IndexCollection.build(ds, specs, params, seed=1)
        depth = len(specs) - 1
        # fully matched query walks the whole chain
        _, visits = coll.find_best_subindex(parse("x:[1,3]"),
                                            count_visits=True)
        assert visits <= len(coll.entries)
        # token query is pruned at the chain head: visits root + one child
        _, visits = coll.find_best_subindex(parse("T"), count_visits=True)
        assert visits == 2
        assert depth > 2  # the pruning actually saved work


class TestPlan:
    def test_decision_flip_with_target_recall(self, worked_collection):
        q = parse("D&(C|E)")
        p1 = worked_collection.plan(q, sef_inf=1)
        assert p1.strategy == "indexed"
        assert worked_collection.entries[p1.subindex].key == "D"
        assert p1.est_cost == pytest.approx(4 * math.log(4) / 3, abs=5e-4)
        p3 = worked_collection.plan(q, sef_inf=3)
        assert p3.strategy == "brute"
        assert p3.alternatives["indexed"] == pytest.approx(3.697, abs=5e-4)
        assert p3.est_cost == pytest.approx(3.0)

    def test_empty_filter_served_brute_and_empty(self, worked_collection):
        plan = worked_collection.plan(parse("NOPE"))
        assert plan.strategy == "brute" and plan.est_cost == 0.0
        res = worked_collection.serve(np.zeros(4, np.float32), parse("NOPE"))
        assert len(res) == 0

    def test_strategy_lower_bound(self, worked_collection):
        # the executed plan is never modeled worse than the better of
        # base-index search at sef_inf and brute force
        coll = worked_collection
        rng = np.random.default_rng(13)
        p = coll.params
        for _ in range(200):
            f = random_filter(rng, depth=2)
            bm = bitmap(f, coll.ds)
            if bm.count == 0:
                continue
            for sef_inf in (1, 2, 5):
                plan = coll.plan(f, bm, sef_inf=sef_inf)
                base_cost = indexed_cost(coll.ds.n, bm.count, sef_inf, p.cor)
                bound = min(base_cost, brute_cost(bm.count, p.gamma))
                assert plan.est_cost <= bound + 1e-9


class TestServe:
    def test_base_only_true_filter_reduces_to_plain_search(self, worked_ds):
        # with brute force priced out, serving the always-true filter equals
        # an unfiltered search of the base graph
        params = CostParams(m_inf=8, sef_inf=8, k=2, gamma=1e9, budget_b=1e9)
        coll = IndexCollection.build(worked_ds, [(TRUE, 8)], params, seed=2)
        res, plan = coll.serve(worked_ds.vectors[1], TRUE, k=2, with_plan=True)
        assert plan.strategy == "indexed" and plan.subindex == 0
        direct = coll.entries[0].graph.search_filtered(
            worked_ds.vectors[1], k=2, sef=plan.sef)
        assert res.ids.tolist() == direct.ids.tolist()

    def test_filter_safety_end_to_end(self, worked_collection):
        coll = worked_collection
        rng = np.random.default_rng(17)
        from fitann import evaluate
        for _ in range(100):
            f = random_filter(rng, depth=2)
            q = rng.standard_normal(4).astype(np.float32)
            res = coll.serve(q, f, k=3)
            for rid in res.ids.tolist():
                assert evaluate(f, coll.ds.attributes[rid])

    def test_indexed_result_matches_subindex_search(self, worked_collection):
        coll = worked_collection
        q = coll.ds.vectors[6]
        f = parse("D")
        res, plan = coll.serve(q, f, k=2, sef_inf=1, with_plan=True)
        assert plan.strategy == "indexed"
        entry = coll.entries[plan.subindex]
        direct = entry.graph.search_filtered(q, 2, max(plan.sef, 2),
                                             bitmap(f, coll.ds))
        assert res.ids.tolist() == direct.ids.tolist()

    def test_serving_recall_regression(self):
        # 10K rows, mixed filters, generous target recall: >= 0.95 vs oracle
        rng = np.random.default_rng(19)
        n = 10_000
        vecs = rng.standard_normal((n, 16)).astype(np.float32)
        attrs = [AttributeSet(tokens={t for t, p in (("A", 0.5), ("B", 0.2),
                                                     ("C", 0.05))
                                      if rng.random() < p})
                 for _ in range(n)]
        ds = AttributedDataset(vectors=vecs, attributes=attrs)
        params = CostParams(m_inf=16, sef_inf=110, k=10,
                            budget_b=16 * n * 3.0)
        tally = WorkloadTally([(parse("A"), 50), (parse("B"), 30),
                               (parse("A&B"), 10), (parse("C"), 10)])
        dag = build_candidate_dag(tally, ds, params)
        sel = greedy_ratio(dag, params)
        coll = IndexCollection.from_selection(ds, sel, dag, params, seed=7)
        hits = total = 0
        for _ in range(60):
            f = [parse("A"), parse("B"), parse("A&B"), parse("C"), TRUE][
                int(rng.integers(5))]
            q = rng.standard_normal(16).astype(np.float32)
            res = coll.serve(q, f, k=10, sef_inf=110)
            want = brute_force_knn(ds, bitmap(f, ds), q, 10)
            hits += len(set(res.ids.tolist()) & set(want.ids.tolist()))
            total += len(want)
        assert hits / total >= 0.95


def _range_dataset(n=4000, lo=0, hi=8, d=8, seed=23):
    # numeric attribute u spread uniformly over [lo, hi)
    rng = np.random.default_rng(seed)
    vals = rng.uniform(lo, hi, n)
    return AttributedDataset(
        vectors=rng.standard_normal((n, d)).astype(np.float32),
        attributes=[AttributeSet(numerics={"u": float(v)}) for v in vals])


class TestMultiIndex:
    def _collection(self, specs_text, params, ds, multi=True):
        specs = [(TRUE, params.m_inf)] + [
            (parse(t), 8) for t in specs_text
        ]
        return IndexCollection.build(ds, specs, params, seed=3,
                                     multi_index=multi)

    def test_disjoint_exact_cover_beats_single(self):
        # query [1,5] covered exactly and disjointly by two pieces while
        # the smallest single cover [0.5,7.5] is only moderately selective
        # for it: the union plan wins under the cost model (cor=1)
        ds = _range_dataset()
        params = CostParams(m_inf=16, sef_inf=40, k=10, gamma=50.0, cor=1.0,
                            budget_b=math.inf)
        coll = self._collection(
            ["u:[1,2.999]", "u:[3,5]", "u:[0.5,7.5]"], params, ds)
        f = parse("u:[1,5]")
        bm = bitmap(f, ds)
        got = coll.multi_index_plan(bm)
        assert got is not None
        ids = {coll.entries[i].key for i, _ in got[0]}
        assert ids == {"u:[1,2.999]", "u:[3,5]"}
        plan = coll.plan(f, bm)
        assert plan.strategy == "multi"
        assert plan.est_cost < plan.alternatives["indexed"]

    def test_high_conditional_selectivity_prefers_single(self):
        # past the model crossover the single cover is cheap enough that
        # the union plan loses
        ds = _range_dataset()
        params = CostParams(m_inf=16, sef_inf=40, k=10, gamma=50.0, cor=1.0,
                            budget_b=math.inf)
        coll = self._collection(
            ["u:[1,2.999]", "u:[3,5]", "u:[1,5.5]"], params, ds)
        f = parse("u:[1,5]")
        plan = coll.plan(f, bitmap(f, ds))
        assert plan.strategy == "indexed"
        assert coll.entries[plan.subindex].key == "u:[1,5.5]"

    def test_exact_match_single_subindex_wins(self):
        ds = _range_dataset()
        params = CostParams(m_inf=16, sef_inf=40, k=10, gamma=50.0, cor=1.0,
                            budget_b=math.inf)
        coll = self._collection(
            ["u:[1,2.999]", "u:[3,5]", "u:[1,5]"], params, ds)
        f = parse("u:[1,5]")
        plan = coll.plan(f, bitmap(f, ds))
        assert plan.strategy == "indexed"
        assert coll.entries[plan.subindex].key == "u:[1,5]"

    def test_base_as_first_pick_collapses_to_single(self):
        ds = _range_dataset()
        params = CostParams(m_inf=16, sef_inf=40, k=10, gamma=50.0,
                            budget_b=math.inf)
        coll = self._collection(["u:[6,7]"], params, ds)
        f = parse("u:[0,5.5]")  # disjoint from the only subindex
        assert coll.multi_index_plan(bitmap(f, ds)) is None

    def test_merged_results_equal_union_rerank(self):
        ds = _range_dataset()
        params = CostParams(m_inf=16, sef_inf=60, k=10, gamma=50.0, cor=1.0,
                            budget_b=math.inf)
        coll = self._collection(["u:[1,2.999]", "u:[3,5]", "u:[0.5,7.5]"],
                                params, ds)
        f = parse("u:[1,5]")
        bm = bitmap(f, ds)
        q = ds.vectors[5]
        res, plan = coll.serve(q, f, k=10, with_plan=True)
        assert plan.strategy == "multi"
        pooled = {}
        for idx, sef in plan.multi:
            part = coll.entries[idx].graph.search_filtered(q, 10,
                                                           max(sef, 10), bm)
            for rid, dist in zip(part.ids.tolist(), part.distances.tolist()):
                pooled.setdefault(rid, dist)
        want = sorted(pooled.items(), key=lambda t: (t[1], t[0]))[:10]
        assert res.ids.tolist() == [r for r, _ in want]

    def test_greedy_cover_within_1p5x_of_exhaustive(self):
        # instances in the disjoint-segment-cover style: a random partition
        # of the value range into pieces plus a couple of wider covers; the
        # query spans a contiguous run of pieces
        rng = np.random.default_rng(31)
        ds = _range_dataset(n=1500, seed=33)
        params = CostParams(m_inf=8, sef_inf=20, k=5, gamma=50.0, cor=1.0,
                            budget_b=math.inf)
        ratios = []
        for trial in range(8):
            cuts = np.sort(rng.uniform(0.5, 7.5, int(rng.integers(2, 6))))
            bounds = [0.0, *cuts.tolist(), 8.0]
            pieces = [f"u:[{lo:.3f},{hi - 0.001:.3f}]"
                      for lo, hi in zip(bounds, bounds[1:])]
            first = int(rng.integers(0, len(pieces) - 1))
            last = int(rng.integers(first + 1, len(pieces)))
            wide_lo = max(0.0, bounds[first] - rng.uniform(0, 1.0))
            wide_hi = min(8.0, bounds[last + 1] + rng.uniform(0.2, 2.0))
            covers = [f"u:[{wide_lo:.3f},{wide_hi:.3f}]"]
            seen = {bitmap(TRUE, ds).bits.tobytes()}
            members = []
            for text in pieces + covers:
                key = bitmap(parse(text), ds).bits.tobytes()
                if key in seen:
                    continue
                seen.add(key)
                members.append(text)
            if len(members) + 1 > 10:
                continue
            coll = self._collection(members, params, ds)
            f = parse(f"u:[{bounds[first]:.3f},{bounds[last + 1] - 0.001:.3f}]")
            bm = bitmap(f, ds)
            if bm.count == 0:
                continue
            got = coll.multi_index_plan(bm)
            if got is None:
                continue
            best = self._exhaustive_cover_cost(coll, bm)
            assert best is not None
            ratios.append(got[1] / best)
            assert got[1] <= 1.5 * best + 1e-9
        assert ratios  # the family must actually produce multi plans

    @staticmethod
    def _exhaustive_cover_cost(coll, bm):
        p = coll.params
        n = coll.ds.n
        target = bm.bits
        ids = range(len(coll.entries))  # base is a legitimate cover member
        best = None
        for r in range(1, len(coll.entries) + 1):
            for combo in itertools.combinations(ids, r):
                covered = np.zeros(n, bool)
                cost = 0.0
                ok = True
                for idx in combo:
                    mask = coll.entries[idx].member_mask(n)
                    cond = int(np.count_nonzero(target & mask))
                    if cond == 0:
                        ok = False
                        break
                    sef = sef_downscale(coll.entries[idx].card, n,
                                        p.sef_inf, p.k)
                    cost += indexed_cost(coll.entries[idx].card, cond, sef,
                                         p.cor)
                    covered |= mask
                if ok and np.all(covered[target]):
                    if best is None or cost < best:
                        best = cost
        return best


class TestBundle:
    def test_round_trip(self, tmp_path, worked_collection):
        coll = worked_collection
        out = tmp_path / "bundle"
        coll.save(out)
        loaded = IndexCollection.load(out, coll.ds)
        assert [e.key for e in loaded.entries] == [e.key for e in coll.entries]
        assert loaded.mode == coll.mode
        q = coll.ds.vectors[2]
        f = parse("A")
        a = coll.serve(q, f, k=2, sef_inf=1)
        b = loaded.serve(q, f, k=2, sef_inf=1)
        assert a.ids.tolist() == b.ids.tolist()

    def test_checksum_verified(self, tmp_path, worked_collection):
        out = tmp_path / "bundle"
        worked_collection.save(out)
        victim = out / "graphs" / "graph_0001.bin"
        blob = bytearray(victim.read_bytes())
        blob[-1] ^= 0xFF
        victim.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="checksum"):
            IndexCollection.load(out, worked_collection.ds)

    def test_mode_mismatch_rejected(self, tmp_path, worked_collection):
        out = tmp_path / "bundle"
        worked_collection.save(out)
        with pytest.raises(ValueError, match="subsumption"):
            IndexCollection.load(out, worked_collection.ds, mode="bitmap")


def test_entries_match_filter_bitmaps(worked_collection):
    coll = worked_collection
    for e in coll.entries:
        assert np.array_equal(np.sort(e.rowids),
                              bitmap(e.filter, coll.ds).nonzero())
