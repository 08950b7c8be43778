"""Independent reference implementations used by the test-suite."""

from __future__ import annotations

import math

import numpy as np

from hsal_gnn.graph import Series


def central_diff(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Numerical gradient of scalar f at x (x is perturbed in place and restored)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + step
        hi = f()
        flat[k] = old - step
        lo = f()
        flat[k] = old
        gflat[k] = (hi - lo) / (2 * step)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||), zero when both vanish."""
    num = np.linalg.norm(np.asarray(a) - np.asarray(b))
    den = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if den == 0 else float(num / den)


def naive_rank(scores, target: int, exclusion=()) -> int:
    excl = set(int(e) for e in exclusion)
    cands = [i for i in range(len(scores)) if i not in excl]
    cands.sort(key=lambda i: (-scores[i], i))
    return cands.index(target) + 1


def naive_ndcg(rank: int, k: int) -> float:
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def sampling_fixpoint(edges, catalog, u, t_k, m, recent_n):
    """Node sets of the m-order sub-graph recomputed from full sets each round.

    ``edges`` are (user, item, time) triples in input order. Every round adds
    all users touching any collected item, then the latest ``recent_n`` items of
    every collected user together with the later items of their series.
    """
    visible = [(k, v, i, t) for k, (v, i, t) in enumerate(edges) if t < t_k]
    later = {}
    for s in catalog:
        for p, i in enumerate(s.items):
            later[i] = set(s.items[p + 1 :])

    def closed(items):
        out = set(items)
        for i in items:
            out |= later.get(i, set())
        return out

    def latest_items(v):
        mine = sorted((t, k, i) for k, w, i, t in visible if w == v)
        return [i for _, _, i in mine[-recent_n:]]

    users = {u}
    items = closed(latest_items(u))
    for _ in range(m):
        new_users = users | {v for _, v, i, _ in visible if i in items}
        new_items = set(items)
        for v in new_users:
            new_items |= closed(latest_items(v))
        if new_users == users and new_items == items:
            break
        users, items = new_users, new_items
    return users, items


def illustrative_example():
    """u1 consumes i1..i4 at t1..t4; series A = (i2, i5, i7), B = (i3, i6).

    Ids: user u1 -> 0, item iK -> K - 1, time tK -> K.
    """
    interactions = [(0, 0, 1), (0, 1, 2), (0, 2, 3), (0, 3, 4)]
    catalog = [Series("A", (1, 4, 6)), Series("B", (2, 5))]
    return interactions, catalog


def random_graph(rng: np.random.Generator, max_nodes: int = 30, max_series: int = 4):
    """Small random interaction log and catalog; at most ``max_nodes`` users + items."""
    n_users = int(rng.integers(2, max_nodes // 2 + 1))
    n_items = int(rng.integers(4, max_nodes - n_users + 1))
    interactions = set()
    for u in range(n_users):
        k = int(rng.integers(1, min(n_items, 6) + 1))
        for i in rng.choice(n_items, size=k, replace=False):
            interactions.add((u, int(i), int(rng.integers(1, 12))))
    perm = [int(i) for i in rng.permutation(n_items)]
    n_series = int(rng.integers(0, max_series + 1))
    catalog, pos = [], 0
    for s in range(n_series):
        length = int(rng.integers(2, 5))
        if pos + length > n_items:
            break
        catalog.append(Series(s, tuple(perm[pos : pos + length])))
        pos += length
    return sorted(interactions), catalog, n_users, n_items
