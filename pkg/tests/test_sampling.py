import math

import numpy as np
import pytest

from hsal_gnn.graph import NodeLookupError, Series, build_graph
from hsal_gnn.sampling import SamplingConfig, SamplingError, batch_sample, sample_subgraph

from oracles import illustrative_example, random_graph, sampling_fixpoint


def _graph():
    interactions, catalog = illustrative_example()
    return build_graph(interactions, catalog, n_users=1, n_items=7)


class TestConfig:
    def test_bounds(self):
        with pytest.raises(SamplingError):
            SamplingConfig(m=-1)
        with pytest.raises(SamplingError):
            SamplingConfig(recent_n=0)


class TestSample:
    def test_m0_is_history_plus_successors(self):
        g = _graph()
        sg = sample_subgraph(g.snapshot(), 0, None, SamplingConfig(m=0))
        assert sg.users == (0,)
        assert set(sg.items) == {0, 1, 2, 3, 4, 5, 6}
        assert sg.rounds == 0

    def test_illustrative_m1(self):
        g = _graph()
        sg = sample_subgraph(g.snapshot(5), 0, None, SamplingConfig(m=1, recent_n=10))
        assert set(sg.items) >= set(range(7))

    def test_induced_edges_and_sequels(self):
        g = _graph()
        sg = sample_subgraph(g.snapshot(3), 0, None, SamplingConfig(m=1))
        assert sg.user_item_edges(g) == [(0, 0, 1), (0, 1, 2)]
        assert {(e.from_item, e.to_item) for e in sg.sequel_edges} == {(1, 4), (4, 6)}

    def test_empty_history(self):
        with pytest.raises(SamplingError):
            sample_subgraph(_graph().snapshot(1), 0, None, SamplingConfig())

    def test_history_item_not_visible(self):
        with pytest.raises(SamplingError):
            sample_subgraph(_graph().snapshot(2), 0, [3], SamplingConfig())

    def test_unknown_anchor(self):
        with pytest.raises(NodeLookupError):
            sample_subgraph(_graph().snapshot(), 5, None, SamplingConfig())

    def test_recent_n_truncates_anchor_history(self):
        g = _graph()
        sg = sample_subgraph(g.snapshot(), 0, None, SamplingConfig(m=0, recent_n=2))
        assert sg.history == (2, 3)
        assert set(sg.items) == {2, 3, 5}

    def test_truncation_can_be_disabled(self):
        # user 1 reaches item 0 early and items 1..3 later; with recent_n=1 only item 3 survives
        inter = [(0, 0, 5), (1, 0, 1), (1, 1, 2), (1, 2, 3), (1, 3, 4)]
        g = build_graph(inter)
        on = sample_subgraph(g.snapshot(), 0, None, SamplingConfig(m=1, recent_n=1))
        off = sample_subgraph(g.snapshot(), 0, None, SamplingConfig(m=1, recent_n=1, truncate_expansion=False))
        assert set(on.items) == {0, 3}
        assert set(off.items) == {0, 1, 2, 3}


class TestOracle:
    @pytest.mark.parametrize("m", [0, 1, 2, 3])
    def test_matches_fixpoint_oracle(self, m):
        rng = np.random.default_rng(100 + m)
        for case in range(100):
            interactions, catalog, nu, ni = random_graph(rng)
            g = build_graph(interactions, catalog, nu, ni)
            u = int(rng.integers(nu))
            times = [t for v, _, t in interactions if v == u]
            t_k = int(rng.integers(min(times) + 1, 14))
            n = int(rng.integers(1, 6))
            sg = sample_subgraph(g.snapshot(t_k), u, None, SamplingConfig(m=m, recent_n=n))
            users, items = sampling_fixpoint(interactions, catalog, u, t_k, m, n)
            assert (set(sg.users), set(sg.items)) == (users, items), f"case {case}"

    def test_monotone_in_m_and_no_leakage(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            interactions, catalog, nu, ni = random_graph(rng)
            g = build_graph(interactions, catalog, nu, ni)
            u = int(rng.integers(nu))
            t_k = int(rng.integers(min(t for v, _, t in interactions if v == u) + 1, 14))
            prev = None
            for m in range(4):
                sg = sample_subgraph(g.snapshot(t_k), u, None, SamplingConfig(m=m, recent_n=3))
                assert all(t < t_k for _, _, t in sg.user_item_edges(g))
                assert sg.rounds <= m
                if prev is not None:
                    assert set(prev.users) <= set(sg.users) and set(prev.items) <= set(sg.items)
                for i in sg.items:
                    assert set(g.sequel_successors(i)) <= set(sg.items)
                prev = sg

    def test_induced_edges_complete(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            interactions, catalog, nu, ni = random_graph(rng)
            g = build_graph(interactions, catalog, nu, ni)
            sg = sample_subgraph(g.snapshot(10), 0, None, SamplingConfig(m=2)) if any(
                v == 0 and t < 10 for v, _, t in interactions) else None
            if sg is None:
                continue
            U, I = set(sg.users), set(sg.items)
            want = sorted((v, i, t) for v, i, t in interactions if v in U and i in I and t < 10)
            assert sorted(sg.user_item_edges(g)) == want


class TestBatch:
    def test_empty(self):
        assert batch_sample(_graph(), [], SamplingConfig()) == []

    def test_repeat_is_identical(self):
        g = _graph()
        a, b = batch_sample(g, [(0, 4), (0, 4)], SamplingConfig(m=2))
        assert (a.users, a.items, a.edge_ids.tolist()) == (b.users, b.items, b.edge_ids.tolist())

    def test_matches_individual_calls(self):
        rng = np.random.default_rng(9)
        interactions, catalog, nu, ni = random_graph(rng, max_nodes=30)
        g = build_graph(interactions, catalog, nu, ni)
        firsts = {}
        for v, _, t in interactions:
            firsts[v] = min(firsts.get(v, 99), t)
        points = [(int(v), firsts[int(v)] + int(rng.integers(1, 6))) for v in rng.choice(sorted(firsts), 50)]
        cfg = SamplingConfig(m=2, recent_n=3)
        batch = batch_sample(g, points, cfg)
        for (u, t), sg in zip(points, batch):
            one = sample_subgraph(g.snapshot(t), u, None, cfg)
            assert (sg.users, sg.items, sg.edge_ids.tolist()) == (one.users, one.items, one.edge_ids.tolist())

    def test_error_annotated(self):
        with pytest.raises(SamplingError, match=r"user=0, t_k=1"):
            batch_sample(_graph(), [(0, 1)], SamplingConfig())
