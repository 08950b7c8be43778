import numpy as np
import pytest

from hsal_gnn.data import (DataConfigError, SyntheticConfig, draw_popular, generate_synthetic,
                           infer_series_by_title, leave_one_out, load_interactions, load_series,
                           write_interactions, write_series, Dataset)
from hsal_gnn.graph import CatalogError, IngestionError, Series, build_graph

from oracles import illustrative_example

SMALL = dict(n_users=150, n_items=80, n_sequential_items=40, n_series_range=(5, 8))


class TestSynthetic:
    def test_standalone_has_no_sequels(self):
        ds = generate_synthetic(SyntheticConfig(mode="standalone", **SMALL))
        assert ds.series_catalog == [] and ds.sequel_fraction() == 0.0

    def test_sequential_order_within_series(self):
        ds = generate_synthetic(SyntheticConfig(mode="sequential", **SMALL))
        position = {i: (s.id, p) for s in ds.series_catalog for p, i in enumerate(s.items)}
        for seq in ds.sequences().values():
            last = {}
            for i, _ in seq:
                if i in position:
                    sid, p = position[i]
                    assert p > last.get(sid, -1)
                    last[sid] = p

    def test_zipf_ratio(self):
        s = 1.5
        ranks = draw_popular(np.random.default_rng(0), 500, s, 100_000)
        counts = np.bincount(ranks, minlength=500)
        ratio = counts[0] / counts[9]
        assert abs(ratio / 10**s - 1) < 0.2

    def test_deterministic(self):
        cfg = SyntheticConfig(mode="mixed", seed=5, **SMALL)
        assert generate_synthetic(cfg).interactions == generate_synthetic(cfg).interactions

    def test_counts_and_timestamps(self):
        cfg = SyntheticConfig(mode="mixed", items_per_user_range=(4, 9), max_interactions_per_user=9, **SMALL)
        ds = generate_synthetic(cfg)
        for seq in ds.sequences().values():
            assert 4 <= len(seq) <= 9
            assert [t for _, t in seq] == list(range(1, len(seq) + 1))
            assert len({i for i, _ in seq}) == len(seq)

    @pytest.mark.parametrize("mode", ["mixed", "sequential", "standalone"])
    def test_ingestible(self, mode):
        ds = generate_synthetic(SyntheticConfig(mode=mode, **SMALL))
        build_graph(ds.interactions, ds.series_catalog, ds.n_users, ds.n_items)

    def test_mixed_share_default_config(self):
        ds = generate_synthetic(SyntheticConfig(mode="mixed"))
        assert ds.n_users == 10_000 and ds.n_items == 500
        assert abs(ds.sequel_fraction() - 0.5) <= 0.05

    def test_infeasible_config(self):
        with pytest.raises(DataConfigError):
            generate_synthetic(SyntheticConfig(n_items=10, n_sequential_items=10, n_series_range=(6, 6)))
        with pytest.raises(DataConfigError):
            generate_synthetic(SyntheticConfig(n_sequential_items=600))


class TestLoad:
    def test_three_rows_sorted(self, tmp_path):
        f = tmp_path / "x.csv"
        f.write_text("a,i2,20\na,i1,10\nb,i1,5\n")
        ds = load_interactions(f)
        assert len(ds.interactions) == 3
        named = [(ds.user_names[u], ds.item_names[i], t) for u, i, t in ds.interactions]
        assert named == [("a", "i1", 10), ("a", "i2", 20), ("b", "i1", 5)]

    def test_malformed_line_reported(self, tmp_path):
        f = tmp_path / "x.csv"
        f.write_text("a,i1,10\nnot a row\nb,i1,5\n")
        with pytest.raises(IngestionError, match=r"\[2\]"):
            load_interactions(f, tolerance=0.0)
        ds = load_interactions(f, tolerance=0.5)
        assert ds.malformed_rows == [2] and len(ds.interactions) == 2

    def test_duplicate_rejected(self, tmp_path):
        f = tmp_path / "x.csv"
        f.write_text("a,i1,10\na,i1,10\n")
        with pytest.raises(IngestionError):
            load_interactions(f)

    def test_movielens_scale(self, tmp_path):
        rng = np.random.default_rng(0)
        users = np.r_[np.arange(943), rng.integers(0, 943, 100_000 - 943)]
        items = np.r_[np.arange(1682), rng.integers(0, 1682, 100_000 - 1682)]
        f = tmp_path / "u.data"
        with open(f, "w") as fh:
            for k in range(100_000):
                fh.write(f"{users[k] + 1}\t{items[k] + 1}\t{1 + k % 5}\t{880000000 + k}\n")
        ds = load_interactions(f, fmt="movielens")
        assert (ds.n_users, ds.n_items, len(ds.interactions)) == (943, 1682, 100_000)

    def test_sample_users(self, tmp_path):
        f = tmp_path / "x.csv"
        f.write_text("a,1,1\nb,1,1\nb,2,2\nc,1,1\nc,2,2\nc,3,3\n")
        ds = load_interactions(f, sample_users=2)
        assert sorted(ds.user_names) == ["b", "c"] and len(ds.interactions) == 5


class TestSeries:
    def test_two_disjoint(self, tmp_path):
        f = tmp_path / "s.csv"
        f.write_text("1,0,1,2\n2,3,4\n")
        assert [s.items for s in load_series(f)] == [(0, 1, 2), (3, 4)]

    def test_overlap(self, tmp_path):
        f = tmp_path / "s.csv"
        f.write_text("1,0,1\n2,1,2\n")
        with pytest.raises(CatalogError):
            load_series(f)

    def test_round_trip(self, tmp_path):
        _, catalog = illustrative_example()
        f = tmp_path / "s.csv"
        write_series(catalog, f)
        assert load_series(f) == catalog

    def test_interactions_round_trip(self, tmp_path):
        ds = generate_synthetic(SyntheticConfig(mode="mixed", **SMALL))
        write_interactions(ds, tmp_path / "i.csv")
        write_series(ds.series_catalog, tmp_path / "s.csv", ds.item_names)
        back = load_interactions(tmp_path / "i.csv")
        names = list(back.item_names)
        cat = load_series(tmp_path / "s.csv", names)
        original = sorted((ds.user_names[u], ds.item_names[i], t) for u, i, t in ds.interactions)
        assert sorted((back.user_names[u], names[i], t) for u, i, t in back.interactions) == original
        assert [[names[i] for i in s.items] for s in cat] == [[str(i) for i in s.items] for s in ds.series_catalog]


class TestTitles:
    def test_parts(self):
        cat = infer_series_by_title({0: "X (Part 1)", 1: "X (Part 2)"})
        assert [s.items for s in cat] == [(0, 1)]

    def test_unrelated(self):
        assert infer_series_by_title({0: "X", 1: "Y"}) == []

    def test_bare_title_is_first(self):
        assert [s.items for s in infer_series_by_title({5: "X 2", 6: "X 3", 7: "X"})] == [(7, 5, 6)]

    def test_roman_and_year(self):
        cat = infer_series_by_title({0: "Rocky (1976)", 1: "Rocky II (1979)", 2: "Rocky III (1982)"})
        assert [s.items for s in cat] == [(0, 1, 2)]

    def test_ambiguous_left_standalone(self):
        assert infer_series_by_title({0: "X 2", 1: "X (Part 2)"}) == []


class TestSplit:
    def _ds(self, lengths):
        inter = [(u, k, k + 1) for u, n in enumerate(lengths) for k in range(n)]
        return Dataset(inter, [], len(lengths), max(lengths))

    def test_five(self):
        sp = leave_one_out(self._ds([5]))
        assert sp.sizes() == (3, 1, 1)
        assert sp.test[0] == (4, 5) and sp.validation[0] == (3, 4)

    def test_two_is_train_only(self):
        sp = leave_one_out(self._ds([2, 4]))
        assert sp.train_only_users == [0] and sp.eval_users() == [1]

    def test_partition(self):
        ds = generate_synthetic(SyntheticConfig(mode="mixed", **SMALL))
        sp = leave_one_out(ds)
        assert sum(sp.sizes()) == len(ds.interactions)
        assert sp.sizes() == leave_one_out(ds).sizes()
