"""Acceptance suite: one PASS/FAIL line per criterion, gathered in the terminal summary.

Slow checks (learnability, sequel directionality) train real models and take
several minutes each; deselect them with ``-m "not slow"``.
"""

import math
import time

import numpy as np
import pytest

from hsal_gnn import model as M
from hsal_gnn import tensor_core as tc
from hsal_gnn.cli import main as cli_main
from hsal_gnn.data import SyntheticConfig, generate_synthetic, leave_one_out
from hsal_gnn.evaluation import EvalConfig, evaluate, hit_at_k, ndcg_at_k, rank_of_target
from hsal_gnn.graph import SequelEdge, Series, UserItemEdge, build_graph
from hsal_gnn.model import ModelConfig, collate, forward, init_params
from hsal_gnn.sampling import SamplingConfig, sample_subgraph
from hsal_gnn.training import TrainConfig, train

from oracles import (central_diff, illustrative_example, naive_ndcg, naive_rank, random_graph, rel_error,
                     sampling_fixpoint)

# pinned tolerances and budgets
GRAD_STEP = 1e-5
GRAD_REL_TOL = 1e-3
GRAD_BUDGET_S = 10.0
N_SAMPLING_CASES = 100
N_METRIC_VECTORS = 1000
METRIC_EXACT_TOL = 1e-12
NORMALIZATION_TOL = 1e-9
LEARN_HIT_FLOOR = 0.8
LEARN_SEEDS = (0, 1, 2, 3, 4)
LEARN_MIN_PASSING = 4
LEARN_BUDGET_S = 300.0
LEARN_MAX_EPOCHS = 50
DIRECTION_SEEDS = (0, 1, 2, 3, 4)
CHANCE_SIGMAS = 3.0
CHANCE_MIN_USERS = 500
CHANCE_VOCAB = 500

TOY = [(0, 0, 1), (0, 1, 2), (0, 2, 3), (1, 1, 1), (1, 3, 2), (1, 2, 4), (2, 0, 2), (2, 3, 3)]
TOY_SERIES = [Series("S", (1, 3))]


def _toy_batch(series=TOY_SERIES):
    g = build_graph(TOY, series, n_users=3, n_items=4)
    sgs = [sample_subgraph(g.snapshot(), u, None, SamplingConfig(m=2)) for u in (0, 1, 2)]
    return collate(sgs, g, 4, [3, 0, 1])


def _toy_params(L=2, fusion="sum"):
    # a wider init than the training default keeps every relu unit active
    cfg = ModelConfig(n_users=3, n_items=4, d=4, n_layers=L, max_order=4, fusion=fusion, init_std=0.5)
    return init_params(cfg, 0)


def test_gradient_soundness(verdict):
    batch, params = _toy_batch(), _toy_params()
    t0 = time.perf_counter()
    params.zero_grad()
    with tc.Tape() as tape:
        loss = M.batch_loss(batch, params)
    tc.backward(loss, tape, list(params))

    def f():
        return M.batch_loss(batch, params).item()

    errors = {n: rel_error(params[n].grad, central_diff(f, params[n].values, GRAD_STEP)) for n in params.names()}
    elapsed = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    ok = errors[worst] < GRAD_REL_TOL and elapsed < GRAD_BUDGET_S
    verdict.record(1, "gradient soundness", ok,
                   f"{len(errors)} tensors, max rel err {errors[worst]:.2e} ({worst}) "
                   f"< {GRAD_REL_TOL:g}; {elapsed:.2f}s < {GRAD_BUDGET_S:g}s")
    assert ok


def test_sampling_oracle(verdict):
    matches, invariant_failures = {}, 0
    for m in (0, 1, 2, 3):
        rng = np.random.default_rng(1000 + m)
        hits = 0
        for _ in range(N_SAMPLING_CASES):
            interactions, catalog, nu, ni = random_graph(rng, max_nodes=30, max_series=4)
            g = build_graph(interactions, catalog, nu, ni)
            u = int(rng.integers(nu))
            t_k = int(rng.integers(min(t for v, _, t in interactions if v == u) + 1, 14))
            n = int(rng.integers(1, 6))
            sg = sample_subgraph(g.snapshot(t_k), u, None, SamplingConfig(m=m, recent_n=n))
            hits += (set(sg.users), set(sg.items)) == sampling_fixpoint(interactions, catalog, u, t_k, m, n)
            leak = any(t >= t_k for _, _, t in sg.user_item_edges(g))
            grown = sample_subgraph(g.snapshot(t_k), u, None, SamplingConfig(m=m + 1, recent_n=n))
            monotone = set(sg.users) <= set(grown.users) and set(sg.items) <= set(grown.items)
            invariant_failures += leak or not monotone
        matches[m] = hits
    ok = all(v == N_SAMPLING_CASES for v in matches.values()) and invariant_failures == 0
    verdict.record(2, "sampling oracle equivalence", ok,
                   "matches per m " + ", ".join(f"m={m}: {v}/{N_SAMPLING_CASES}" for m, v in matches.items())
                   + f"; invariant violations {invariant_failures}")
    assert ok


def test_metric_oracles(verdict):
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(N_METRIC_VECTORS):
        n = int(rng.integers(2, 60))
        # coarse values force ties
        scores = rng.integers(0, 8, size=n).astype(float) if rng.random() < 0.5 else rng.normal(size=n)
        target = int(rng.integers(n))
        excl = [int(i) for i in rng.choice(n, size=int(rng.integers(0, n // 2 + 1)), replace=False) if i != target]
        r = rank_of_target(scores, target, excl)
        want = naive_rank(scores, target, excl)
        for k in (1, 5, 10, 20):
            mismatches += r != want or hit_at_k(r, k) != int(want <= k) or ndcg_at_k(r, k) != naive_ndcg(want, k)
    spot = [abs(ndcg_at_k(3, 10) - 0.5), abs(ndcg_at_k(1, 10) - 1.0), abs(ndcg_at_k(7, 10) - 1 / 3)]
    ok = mismatches == 0 and max(spot) <= METRIC_EXACT_TOL and ndcg_at_k(11, 10) == 0.0
    verdict.record(3, "metric oracles", ok,
                   f"{N_METRIC_VECTORS} vectors, {mismatches} mismatches; rank 3 NDCG err {spot[0]:.1e} "
                   f"<= {METRIC_EXACT_TOL:g}")
    assert ok


@pytest.mark.slow
def test_learnability(verdict):
    ds = generate_synthetic(SyntheticConfig(n_users=200, n_items=60, n_sequential_items=60, n_series_range=(10, 10),
                                            even_series=True, mode="sequential", seed=0))
    split = leave_one_out(ds)
    hits, times = [], []
    for seed in LEARN_SEEDS:
        cfg = TrainConfig(d=16, n_layers=2, m=2, epochs=LEARN_MAX_EPOCHS, seed=seed)
        t0 = time.perf_counter()
        res = train(ds, cfg, split)
        rep = evaluate(res.params, split, ds, cfg.sampling_config(), EvalConfig(ks=(10,)))
        times.append(time.perf_counter() - t0)
        hits.append(rep.hit[10])
    passing = sum(h >= LEARN_HIT_FLOOR for h in hits)
    ok = passing >= LEARN_MIN_PASSING and max(times) < LEARN_BUDGET_S
    verdict.record(4, "learnability on pure-sequential data", ok,
                   "test Hit@10 per seed " + ", ".join(f"{h:.3f}" for h in hits)
                   + f"; {passing}/{len(hits)} >= {LEARN_HIT_FLOOR}; slowest seed {max(times):.0f}s "
                   f"< {LEARN_BUDGET_S:g}s")
    assert ok


@pytest.mark.slow
def test_sequel_directionality(verdict):
    ds = generate_synthetic(SyntheticConfig(n_users=300, n_items=100, n_sequential_items=50, n_series_range=(6, 8),
                                            items_per_user_range=(6, 10), mode="mixed", seed=2022))
    split = leave_one_out(ds)
    full, ablated = [], []
    for seed in DIRECTION_SEEDS:
        for use, sink in ((True, full), (False, ablated)):
            cfg = TrainConfig(d=16, n_layers=2, m=1, recent_n=20, epochs=10, patience=3, seed=seed, use_sequels=use)
            res = train(ds, cfg, split)
            data = ds if use else ds.without_series()
            sink.append(evaluate(res.params, split, data, cfg.sampling_config(), EvalConfig(ks=(10,))).hit[10])
    ok = np.mean(full) >= np.mean(ablated)
    verdict.record(5, "sequel signal directionality", ok,
                   f"sequel share {ds.sequel_fraction():.3f}; mean Hit@10 full {np.mean(full):.4f} "
                   f"vs ablated {np.mean(ablated):.4f} (per seed full "
                   + ", ".join(f"{h:.3f}" for h in full) + "; ablated " + ", ".join(f"{h:.3f}" for h in ablated) + ")")
    assert ok


def test_algebraic_identities(verdict):
    checks = {}
    p = _toy_params()
    rng = np.random.default_rng(11)
    hL, hS = tc.Tensor(rng.normal(size=(5, 4))), tc.Tensor(rng.normal(size=(5, 4)))
    fused = M.fuse(hL, hS, tc.Tensor(np.zeros((5, 4))), "sum", p).values
    checks["sum fusion with zero sequel == MLP (bitwise)"] = fused.tobytes() == M.mlp_aggregate(hL, hS, p).values.tobytes()

    sm = tc.softmax(tc.Tensor(rng.normal(scale=30.0, size=(50, 17)))).values
    checks["softmax rows sum to 1"] = float(np.max(np.abs(sm.sum(axis=1) - 1))) <= NORMALIZATION_TOL

    batch = _toy_batch()
    res = forward(batch, p)
    worst = 0.0
    for layer in res.attention:
        for name, seg in (("alpha", batch.edge_user), ("alpha_hat", batch.edge_user),
                          ("beta", batch.edge_item), ("beta_hat", batch.edge_item)):
            sums = np.bincount(seg, weights=layer[name].values)
            worst = max(worst, float(np.max(np.abs(sums[sums > 0] - 1))))
    checks["attention weights sum to 1"] = worst <= NORMALIZATION_TOL

    p0 = _toy_params(L=0)
    out = forward(batch, p0).h_final.values
    checks["zero-layer forward returns the user embedding"] = out.tobytes() == p0["E_U"].values[[0, 1, 2]].tobytes()

    ok = all(checks.values())
    verdict.record(6, "exact algebraic identities", ok,
                   "; ".join(f"{k}: {'ok' if v else 'BROKEN'}" for k, v in checks.items())
                   + f" (max attention deviation {worst:.1e})")
    assert ok


def test_determinism(verdict, tmp_path):
    data = tmp_path / "data"
    cli_main(["generate", "--n-users", "40", "--n-items", "30", "--n-sequential-items", "15", "--n-series", "3,4",
              "--seed", "1", "--out", str(data)])
    small = ["--d", "8", "--layers", "2", "--m", "2", "--recent-n", "10", "--epochs", "2", "--epochs-exact"]
    codes = [cli_main(["train", "--data", str(data), "--seed", "7", *small, "--out", str(tmp_path / run)])
             for run in ("a", "b")]
    same = {name: (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
            for name in ("train_seed7.jsonl", "model_seed7.ckpt")}
    ok = codes == [0, 0] and all(same.values())
    verdict.record(7, "determinism of train --seed 7", ok,
                   ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in same.items()))
    assert ok


def test_chance_level(verdict):
    ds = generate_synthetic(SyntheticConfig(n_users=600, n_items=CHANCE_VOCAB, n_sequential_items=250,
                                            n_series_range=(20, 30), mode="mixed", seed=8))
    split = leave_one_out(ds)
    cfg = TrainConfig(d=16, n_layers=2, m=2, recent_n=20)
    params = init_params(cfg.model_config(ds.n_users, ds.n_items), 123)
    rep = evaluate(params, split, ds, cfg.sampling_config(), EvalConfig(ks=(10,)))

    context = {}
    for u, i, _ in split.train:
        context.setdefault(u, set()).add(i)
    for u, (i, _) in split.validation.items():
        context.setdefault(u, set()).add(i)
    # per-user chance rate given the candidate pool left after removing seen items
    probs = np.array([min(10, ds.n_items - len(context.get(u, ()))) / (ds.n_items - len(context.get(u, ())))
                      for u in rep.ranks])
    n = len(probs)
    expected = probs.mean()
    sigma = math.sqrt(float(np.sum(probs * (1 - probs)))) / n
    z = (rep.hit[10] - expected) / sigma
    ok = n >= CHANCE_MIN_USERS and abs(z) <= CHANCE_SIGMAS
    verdict.record(8, "chance-level untrained model", ok,
                   f"{n} users, Hit@10 {rep.hit[10]:.4f} vs expected {expected:.4f} "
                   f"(sigma {sigma:.4f}, z {z:+.2f}, limit {CHANCE_SIGMAS:g})")
    assert ok


def test_illustrative_graph(verdict):
    interactions, catalog = illustrative_example()
    g = build_graph(interactions, catalog, n_users=1, n_items=7)
    # ids shift by one: user u1 -> 0, item iK -> K - 1, time tK -> K
    want_sequel = {SequelEdge(1, 4, "A", 2), SequelEdge(4, 6, "A", 3), SequelEdge(2, 5, "B", 2)}
    want_ui = [UserItemEdge(0, k, k + 1, k + 1, 1) for k in range(4)]
    got_sequel, got_ui = set(g.sequel_edges()), g.user_item_edges()
    ok = got_sequel == want_sequel and got_ui == want_ui
    verdict.record(9, "illustrative graph construction", ok,
                   f"{len(got_sequel)} sequel edges, {len(got_ui)} user-item edges, exact match {ok}")
    assert ok
